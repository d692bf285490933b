use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use grnmt::beamsearch::{beam_search, BeamConfig};
use grnmt::config::RunConfig;
use grnmt::corpus::{
    build_vocab, filter_pairs, gen_toy_task, read_id_lines, read_lines, tokenize, toy_vocabulary, write_id_lines,
    SentencePair, ToyTask, Vocabulary, UNK_TOKEN,
};
use grnmt::dot::{edges_to_dot, tree_to_dot};
use grnmt::eval::{
    bleu_by_length, bleu_by_max_unk, corpus_bleu, in_length_bucket, no_unk_subset, write_curve_csv, EvalPair,
    LengthAxis,
};
use grnmt::model::EncoderKind;
use grnmt::model_file::{load_checkpoint, load_model, save_checkpoint, save_model, Checkpoint};
use grnmt::structure::{extract_tree, ExtractMode, Structure};
use grnmt::training::{init_model, Trainer};
use grnmt::Model64;

use crate::{EvaluateArgs, GenToyArgs, ParseArgs, PrepareArgs, TrainArgs, TranslateArgs};

const SRC_VOCAB: &str = "src.vocab";
const TGT_VOCAB: &str = "tgt.vocab";
const SRC_IDS: &str = "src.ids";
const TGT_IDS: &str = "tgt.ids";

fn read_text(path: &Path) -> Result<Vec<String>> {
    read_lines(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_nonempty(path: &Path) -> Result<Vec<String>> {
    let lines = read_text(path)?;
    ensure!(!lines.is_empty(), "{} is empty", path.display());
    Ok(lines)
}

fn read_aligned(a: &Path, b: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let (x, y) = (read_nonempty(a)?, read_nonempty(b)?);
    ensure!(
        x.len() == y.len(),
        "line count mismatch: {} has {} lines, {} has {}",
        a.display(),
        x.len(),
        b.display(),
        y.len()
    );
    Ok((x, y))
}

fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::load(path).with_context(|| format!("cannot load vocabulary {}", path.display()))
}

fn vocab_dir(explicit: &Option<PathBuf>, model: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| match model.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    })
}

fn open_model(path: &Path) -> Result<Model64> {
    load_model(path).with_context(|| format!("cannot load model {}", path.display()))
}

pub fn prepare(a: &PrepareArgs) -> Result<()> {
    let (src, tgt) = read_aligned(&a.src, &a.tgt)?;
    ensure!(a.max_len >= 1, "--max-len must be >= 1");
    let total = src.len();
    let kept: Vec<(Vec<&str>, Vec<&str>)> = src
        .iter()
        .zip(&tgt)
        .map(|(s, t)| (tokenize(s), tokenize(t)))
        .filter(|(s, t)| !s.is_empty() && !t.is_empty() && s.len() <= a.max_len && t.len() <= a.max_len)
        .collect();
    let src_vocab = build_vocab(kept.iter().map(|p| &p.0), a.src_vocab_size.unwrap_or(a.vocab_size))?;
    let tgt_vocab = build_vocab(kept.iter().map(|p| &p.1), a.tgt_vocab_size.unwrap_or(a.vocab_size))?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    src_vocab.save(a.out.join(SRC_VOCAB))?;
    tgt_vocab.save(a.out.join(TGT_VOCAB))?;
    write_id_lines(a.out.join(SRC_IDS), kept.iter().map(|p| src_vocab.encode(&p.0)))?;
    write_id_lines(a.out.join(TGT_IDS), kept.iter().map(|p| tgt_vocab.encode(&p.1)))?;
    println!("pairs before filtering: {total}");
    println!("pairs after filtering: {}", kept.len());
    println!("source vocabulary: {} (+3 reserved)", src_vocab.capacity());
    println!("target vocabulary: {} (+3 reserved)", tgt_vocab.capacity());
    Ok(())
}

pub fn gen_toy(a: &GenToyArgs) -> Result<()> {
    let task: ToyTask = a.task.parse()?;
    let mut rng = grnmt::numerics::Rng::new(a.seed);
    let pairs = gen_toy_task(task, a.vocab_size, a.min_len..=a.max_len, a.count, &mut rng)?;
    let vocab = toy_vocabulary(a.vocab_size);
    for (path, side) in [(&a.out_src, 0), (&a.out_tgt, 1)] {
        let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        for p in &pairs {
            let ids = if side == 0 { &p.source } else { &p.target };
            writeln!(w, "{}", vocab.decode(ids)?.join(" "))?;
        }
        w.flush()?;
    }
    Ok(())
}

fn load_corpus(dir: &Path) -> Result<(Vocabulary, Vocabulary, Vec<SentencePair>)> {
    let sv = load_vocab(&dir.join(SRC_VOCAB))?;
    let tv = load_vocab(&dir.join(TGT_VOCAB))?;
    let s = read_id_lines(dir.join(SRC_IDS)).context("cannot read source ids")?;
    let t = read_id_lines(dir.join(TGT_IDS)).context("cannot read target ids")?;
    ensure!(s.len() == t.len(), "corpus id files differ in length");
    ensure!(!s.is_empty(), "corpus in {} is empty", dir.display());
    for (ids, v, side) in [(&s, &sv, "source"), (&t, &tv, "target")] {
        if let Some(bad) = ids.iter().flatten().find(|&&id| id as usize >= v.len()) {
            bail!("{side} id {bad} outside vocabulary of size {}", v.len());
        }
    }
    let pairs = s.into_iter().zip(t).map(|(a, b)| SentencePair::new(a, b)).collect();
    Ok((sv, tv, pairs))
}

fn checkpoint_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".ckpt");
    PathBuf::from(p)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("invalid config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for o in &a.overrides {
        cfg.set_override(o)?;
    }
    let (sv, tv, pairs) = load_corpus(&a.corpus)?;
    let pairs = filter_pairs(pairs, cfg.max_len)?;
    ensure!(!pairs.is_empty(), "no training pairs within max_len {}", cfg.max_len);
    let tcfg = cfg.train_config();
    let ckpt = checkpoint_path(&a.out);
    let model_dir = vocab_dir(&None, &a.out);
    fs::create_dir_all(&model_dir).with_context(|| format!("cannot create {}", model_dir.display()))?;

    let mut trainer = if a.resume {
        let ck: Checkpoint<f64> =
            load_checkpoint(&ckpt).with_context(|| format!("cannot resume from {}", ckpt.display()))?;
        let expect = cfg.model_dims(sv.len(), tv.len());
        ensure!(ck.model.dims() == expect, "checkpoint shape {:?} does not match config {expect:?}", ck.model.dims());
        Trainer::resume(ck.model, ck.optimizer, tcfg, ck.updates)
    } else {
        let model = init_model(cfg.model_dims(sv.len(), tv.len()), cfg.seed, cfg.init_sigma)?;
        Trainer::new(model, tcfg)?
    };

    let mut csv = match &a.loss_csv {
        Some(p) => Some(BufWriter::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => None,
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "update_index,avg_nats_per_token")?;
    if let Some(w) = csv.as_mut() {
        writeln!(w, "update_index,avg_nats_per_token")?;
    }
    trainer.run(
        &pairs,
        |p| {
            writeln!(out, "{}", p.csv_line())?;
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", p.csv_line())?;
            }
            Ok(true)
        },
        |t| {
            let ck = Checkpoint {
                model: t.model.clone(),
                optimizer: t.optimizer.clone(),
                updates: t.updates,
            };
            save_checkpoint(&ck, &ckpt)?;
            Ok(true)
        },
    )?;
    if let Some(mut w) = csv {
        w.flush()?;
    }
    save_model(&trainer.model, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    if trainer.config.checkpoint_interval > 0 {
        let ck = Checkpoint {
            model: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
            updates: trainer.updates,
        };
        save_checkpoint(&ck, &ckpt)?;
    }
    // Keep the vocabularies next to the model so translate/parse find them.
    for name in [SRC_VOCAB, TGT_VOCAB] {
        let (from, to) = (a.corpus.join(name), model_dir.join(name));
        if fs::canonicalize(&from).ok() != fs::canonicalize(&to).ok() {
            fs::copy(&from, &to).with_context(|| format!("cannot copy {}", from.display()))?;
        }
    }
    Ok(())
}

pub fn translate(a: &TranslateArgs) -> Result<()> {
    let model = open_model(&a.model)?;
    let dir = vocab_dir(&a.vocab_dir, &a.model);
    let sv = load_vocab(&dir.join(SRC_VOCAB))?;
    let tv = load_vocab(&dir.join(TGT_VOCAB))?;
    let dims = model.dims();
    ensure!(
        sv.len() == dims.src_vocab && tv.len() == dims.tgt_vocab,
        "vocabularies in {} do not match the model",
        dir.display()
    );
    let cfg = BeamConfig {
        width: a.beam,
        max_len: a.max_len,
        exclude_unk: !a.allow_unk,
        k_best: a.k_best,
    };
    let lines = read_text(&a.input)?;
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (n, line) in lines.iter().enumerate() {
        let src = sv.encode_line(line);
        if src.is_empty() {
            writeln!(out, "\t{:.2}\tempty", 0.0)?;
        } else {
            let results = beam_search(&model, &src, &cfg).with_context(|| format!("line {}", n + 1))?;
            for t in results {
                let words = tv.decode(&t.tokens)?.join(" ");
                write!(out, "{words}\t{:.2}", t.neg_log_prob())?;
                if a.normalized {
                    write!(out, "\t{:.4}", t.score)?;
                }
                if t.forced {
                    write!(out, "\tforced")?;
                }
                writeln!(out)?;
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn unk_count(tokens: &[&str], vocab: Option<&Vocabulary>) -> usize {
    tokens
        .iter()
        .filter(|t| match vocab {
            Some(v) => !v.contains(t) || **t == UNK_TOKEN,
            None => **t == UNK_TOKEN,
        })
        .count()
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let (hyp, reference) = read_aligned(&a.hyp, &a.reference)?;
    let source = match &a.source {
        Some(p) => {
            let s = read_text(p)?;
            ensure!(s.len() == hyp.len(), "line count mismatch: {} has {} lines, expected {}", p.display(), s.len(), hyp.len());
            Some(s)
        }
        None => None,
    };
    let axis: LengthAxis = a.axis.parse()?;
    let needs_source = a.by_unk || (axis != LengthAxis::Reference && (a.by_length.is_some() || a.min_len.is_some() || a.max_len.is_some()));
    ensure!(source.is_some() || !needs_source, "--source is required for source lengths and UNK counts");
    let sv = a.src_vocab.as_deref().map(load_vocab).transpose()?;
    let tv = a.tgt_vocab.as_deref().map(load_vocab).transpose()?;

    let mut pairs: Vec<EvalPair> = Vec::with_capacity(hyp.len());
    for i in 0..hyp.len() {
        let r = tokenize(&reference[i]);
        let s = source.as_ref().map(|s| tokenize(&s[i])).unwrap_or_default();
        pairs.push(EvalPair {
            hypothesis: tokenize(&hyp[i]).into_iter().map(str::to_owned).collect(),
            source_len: s.len(),
            source_unk_count: unk_count(&s, sv.as_ref()),
            reference_unk_count: unk_count(&r, tv.as_ref()),
            reference: r.into_iter().map(str::to_owned).collect(),
        });
    }
    if a.min_len.is_some() || a.max_len.is_some() {
        let lo = a.min_len.unwrap_or(0);
        let hi = a.max_len.unwrap_or(usize::MAX - 1);
        ensure!(lo <= hi, "--min-len exceeds --max-len");
        pairs.retain(|p| in_length_bucket(p, axis, lo, hi - lo + 1));
    }
    if a.no_unk_only {
        pairs = no_unk_subset(&pairs);
    }
    ensure!(!pairs.is_empty(), "no pairs left to score");
    println!("BLEU = {:.6} ({} pairs)", corpus_bleu(&pairs, 4)?, pairs.len());

    if a.by_length.is_some() || a.by_unk {
        fs::create_dir_all(&a.csv_dir)?;
    }
    if let Some(window) = a.by_length {
        let curve = bleu_by_length(&pairs, window, axis)?;
        let path = a.csv_dir.join(format!("bleu_by_length_{axis}.csv"));
        write_curve_csv(&curve, BufWriter::new(fs::File::create(&path)?))?;
        println!("wrote {}", path.display());
    }
    if a.by_unk {
        let curve = bleu_by_max_unk(&pairs);
        let path = a.csv_dir.join("bleu_by_unk.csv");
        write_curve_csv(&curve, BufWriter::new(fs::File::create(&path)?))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn parse(a: &ParseArgs) -> Result<()> {
    let mode: ExtractMode = a.mode.parse()?;
    let model = open_model(&a.model)?;
    ensure!(model.dims().kind == EncoderKind::GrConv, "{} is not a grConv model", a.model.display());
    let sv = load_vocab(&vocab_dir(&a.vocab_dir, &a.model).join(SRC_VOCAB))?;
    ensure!(sv.len() == model.dims().src_vocab, "source vocabulary does not match the model");
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    for (n, line) in read_text(&a.input)?.iter().enumerate() {
        let name = format!("sentence_{}", n + 1);
        let words: Vec<String> = tokenize(line).into_iter().map(str::to_owned).collect();
        if words.is_empty() {
            writeln!(out, "digraph \"{name}\" {{\n}}")?;
            continue;
        }
        let rec = model.gate_record(&sv.encode(&words))?;
        let dot = match extract_tree(&rec, mode, a.threshold)? {
            Structure::Tree(t) => tree_to_dot(&name, &t, &words),
            Structure::Edges(e) => edges_to_dot(&name, &e, &words),
        };
        out.write_all(dot.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}
