//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid configuration; unknown or repeated keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::beamsearch::BeamConfig;
use crate::error::{Error, Result};
use crate::gru::INIT_SIGMA;
use crate::model::{EncoderKind, ModelDims};
use crate::structure::DEFAULT_THRESHOLD;
use crate::training::{TrainConfig, ADADELTA_EPS, ADADELTA_RHO, CLIP_NORM};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub encoder: EncoderKind,
    pub d_emb: usize,
    pub d_hidden: usize,
    /// Context size; 0 means "same as d_hidden". The recurrent encoder
    /// requires equality.
    pub d_ctx: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian-initialized tensors.
    pub init_sigma: f64,
    pub batch_size: usize,
    pub max_updates: u64,
    pub checkpoint_interval: u64,
    pub report_interval: u64,
    pub clip_norm: f64,
    pub adadelta_rho: f64,
    pub adadelta_eps: f64,
    pub input_dropout: f64,
    pub beam_width: usize,
    pub k_best: usize,
    pub exclude_unk: bool,
    pub bleu_window: usize,
    pub tree_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Rnn,
            d_emb: 32,
            d_hidden: 64,
            d_ctx: 0,
            src_vocab_size: 30_000,
            tgt_vocab_size: 30_000,
            max_len: 30,
            seed: 1234,
            init_sigma: INIT_SIGMA,
            batch_size: 32,
            max_updates: 10_000,
            checkpoint_interval: 1000,
            report_interval: 100,
            clip_norm: CLIP_NORM,
            adadelta_rho: ADADELTA_RHO,
            adadelta_eps: ADADELTA_EPS,
            input_dropout: 0.0,
            beam_width: 10,
            k_best: 10,
            exclude_unk: true,
            bleu_window: 10,
            tree_threshold: DEFAULT_THRESHOLD,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str, line: usize) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: invalid value {value:?} for {key}")))
}

macro_rules! keys {
    ($($name:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$(stringify!($name)),*];

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    $(stringify!($name) => self.$name = parse(key, value, line)?,)*
                    _ => return Err(Error::Config(format!("line {line}: unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key with its current value, one per line.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                $(let _ = writeln!(s, "{} = {}", stringify!($name), self.$name);)*
                s
            }
        }
    };
}

keys!(
    encoder,
    d_emb,
    d_hidden,
    d_ctx,
    src_vocab_size,
    tgt_vocab_size,
    max_len,
    seed,
    init_sigma,
    batch_size,
    max_updates,
    checkpoint_interval,
    report_interval,
    clip_norm,
    adadelta_rho,
    adadelta_eps,
    input_dropout,
    beam_width,
    k_best,
    exclude_unk,
    bleu_window,
    tree_threshold,
);

impl RunConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line}: expected key = value")))?;
            let (key, value) = (key.trim(), value.trim());
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("line {line}: duplicate key {key:?}")));
            }
            cfg.set(key, value, line)?;
            seen.push(key.to_owned());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    /// Apply one `key=value` override.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim(), 0)?;
        self.validate()
    }

    pub fn context_dim(&self) -> usize {
        if self.d_ctx == 0 {
            self.d_hidden
        } else {
            self.d_ctx
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, k) in [
            (self.d_emb, "d_emb"),
            (self.d_hidden, "d_hidden"),
            (self.src_vocab_size, "src_vocab_size"),
            (self.tgt_vocab_size, "tgt_vocab_size"),
            (self.max_len, "max_len"),
            (self.beam_width, "beam_width"),
            (self.k_best, "k_best"),
            (self.bleu_window, "bleu_window"),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if !(self.init_sigma.is_finite() && self.init_sigma > 0.0) {
            return Err(Error::Config("init_sigma must be positive".into()));
        }
        if self.encoder == EncoderKind::Rnn && self.context_dim() != self.d_hidden {
            return Err(Error::Config("rnnenc requires d_ctx = d_hidden".into()));
        }
        self.train_config().validate()
    }

    /// Model shape for the given vocabulary sizes (reserved ids included).
    pub fn model_dims(&self, src_vocab: usize, tgt_vocab: usize) -> ModelDims {
        ModelDims {
            kind: self.encoder,
            d_emb: self.d_emb,
            d_hidden: self.d_hidden,
            d_ctx: self.context_dim(),
            src_vocab,
            tgt_vocab,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_updates: self.max_updates,
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
            report_interval: self.report_interval,
            clip_norm: self.clip_norm,
            rho: self.adadelta_rho,
            eps: self.adadelta_eps,
            input_dropout: self.input_dropout,
        }
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            width: self.beam_width,
            max_len: None,
            exclude_unk: self.exclude_unk,
            k_best: self.k_best,
        }
    }
}
