//! `grnmt`: prepare corpora, train, translate, evaluate and inspect grConv
//! structures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "grnmt", version, about = "Gated recurrent / grConv encoder-decoder translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build vocabularies and write the length-filtered, id-encoded corpus.
    Prepare(PrepareArgs),
    /// Write a synthetic copy/reverse parallel corpus.
    GenToy(GenToyArgs),
    /// Train a model on a prepared corpus.
    Train(TrainArgs),
    /// Beam-search translation of each input line.
    Translate(TranslateArgs),
    /// Corpus BLEU plus length and unknown-word breakdowns.
    Evaluate(EvaluateArgs),
    /// Emit the grConv structure of each input line as DOT.
    Parse(ParseArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Source-side text, one sentence per line.
    #[arg(long)]
    pub src: PathBuf,
    /// Target-side text aligned line by line with --src.
    #[arg(long)]
    pub tgt: PathBuf,
    /// Vocabulary capacity for both sides (reserved ids not counted).
    #[arg(long, short = 'k', default_value_t = 30_000)]
    pub vocab_size: usize,
    /// Override the source capacity.
    #[arg(long)]
    pub src_vocab_size: Option<usize>,
    /// Override the target capacity.
    #[arg(long)]
    pub tgt_vocab_size: Option<usize>,
    /// Drop pairs with more tokens than this on either side.
    #[arg(long, default_value_t = 30)]
    pub max_len: usize,
    #[arg(long, short = 'o')]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenToyArgs {
    /// copy | reverse
    #[arg(long, default_value = "copy")]
    pub task: String,
    #[arg(long, default_value_t = 20)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 3)]
    pub min_len: usize,
    #[arg(long, default_value_t = 8)]
    pub max_len: usize,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_tgt: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// key = value configuration file; defaults apply to absent keys.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output model file; checkpoints go to `<out>.ckpt`.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Continue from `<out>.ckpt`.
    #[arg(long)]
    pub resume: bool,
    /// Also write the loss trace to this CSV file.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long, short = 'm')]
    pub model: PathBuf,
    /// One source sentence per line.
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    /// Directory holding src.vocab and tgt.vocab (default: the model's).
    #[arg(long)]
    pub vocab_dir: Option<PathBuf>,
    #[arg(long, short = 's', default_value_t = 10)]
    pub beam: usize,
    #[arg(long, default_value_t = 10)]
    pub k_best: usize,
    /// Output cap in tokens, end-of-sentence excluded (default 3 x source
    /// length + 10).
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Allow hypotheses containing the unknown token.
    #[arg(long)]
    pub allow_unk: bool,
    /// Add the length-normalized score as a column.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Source sentences, needed for source-length and UNK breakdowns.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Count source tokens outside this vocabulary as unknown (otherwise
    /// only literal `[UNK]` tokens count).
    #[arg(long)]
    pub src_vocab: Option<PathBuf>,
    #[arg(long)]
    pub tgt_vocab: Option<PathBuf>,
    /// Write a BLEU-by-length curve with this window (default 10 when set
    /// without a value).
    #[arg(long, num_args = 0..=1, default_missing_value = "10")]
    pub by_length: Option<usize>,
    /// source | reference | both
    #[arg(long, default_value = "source")]
    pub axis: String,
    /// Write a BLEU-by-max-UNK curve.
    #[arg(long)]
    pub by_unk: bool,
    /// Score only pairs without unknown words.
    #[arg(long)]
    pub no_unk_only: bool,
    /// Keep pairs whose axis length is at least this.
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Keep pairs whose axis length is at most this.
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long, default_value = ".")]
    pub csv_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    #[arg(long, short = 'm')]
    pub model: PathBuf,
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab_dir: Option<PathBuf>,
    /// hard | soft
    #[arg(long, default_value = "hard")]
    pub mode: String,
    #[arg(long, default_value_t = 0.1)]
    pub threshold: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => commands::prepare(&a),
        Command::GenToy(a) => commands::gen_toy(&a),
        Command::Train(a) => commands::train(&a),
        Command::Translate(a) => commands::translate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Parse(a) => commands::parse(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
