//! Corpus BLEU and its breakdowns by sentence length and unknown-word count.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::io::Write;
use std::str::FromStr;

use crate::corpus::count_unk;
use crate::corpus::TokenId;
use crate::error::{Error, Result};

/// One scored hypothesis with its single reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair<W = String> {
    pub hypothesis: Vec<W>,
    pub reference: Vec<W>,
    pub source_len: usize,
    pub source_unk_count: usize,
    pub reference_unk_count: usize,
}

impl<W> EvalPair<W> {
    /// A pair with no source information (source length taken as 0).
    pub fn new(hypothesis: Vec<W>, reference: Vec<W>) -> Self {
        Self {
            hypothesis,
            reference,
            source_len: 0,
            source_unk_count: 0,
            reference_unk_count: 0,
        }
    }
}

impl EvalPair<TokenId> {
    /// Build from id sequences; UNK counts are taken from the ids.
    pub fn from_ids(source: &[TokenId], hypothesis: Vec<TokenId>, reference: Vec<TokenId>) -> Self {
        Self {
            source_len: source.len(),
            source_unk_count: count_unk(source),
            reference_unk_count: count_unk(&reference),
            hypothesis,
            reference,
        }
    }
}

/// Summed n-gram statistics of a corpus.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BleuStats {
    /// `matches[n-1]`: clipped n-gram matches.
    pub matches: Vec<u64>,
    /// `totals[n-1]`: hypothesis n-gram count.
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> f64 {
        let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
        if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        (1.0 - self.ref_len as f64 / self.hyp_len as f64).min(0.0).exp()
    }

    pub fn bleu(&self) -> f64 {
        let n = self.matches.len();
        if n == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_mean = (1..=n).map(|k| self.precision(k).ln()).sum::<f64>() / n as f64;
        (self.brevity_penalty() * log_mean.exp()).clamp(0.0, 1.0)
    }
}

fn ngram_counts<W: Hash + Eq>(words: &[W], n: usize) -> HashMap<&[W], u64> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for g in words.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats<'a, W, I>(pairs: I, max_n: usize) -> BleuStats
where
    W: Hash + Eq + 'a,
    I: IntoIterator<Item = &'a EvalPair<W>>,
{
    let mut s = BleuStats {
        matches: vec![0; max_n],
        totals: vec![0; max_n],
        ..BleuStats::default()
    };
    for p in pairs {
        s.hyp_len += p.hypothesis.len() as u64;
        s.ref_len += p.reference.len() as u64;
        for n in 1..=max_n {
            let hyp = ngram_counts(&p.hypothesis, n);
            let reference = ngram_counts(&p.reference, n);
            for (g, c) in hyp {
                s.totals[n - 1] += c;
                s.matches[n - 1] += c.min(reference.get(g).copied().unwrap_or(0));
            }
        }
    }
    s
}

/// Corpus-level BLEU with clipped precisions up to `max_n`, no smoothing.
pub fn corpus_bleu<W: Hash + Eq>(pairs: &[EvalPair<W>], max_n: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("BLEU corpus"));
    }
    if max_n == 0 {
        return Err(Error::InvalidArgument("BLEU max_n must be >= 1".into()));
    }
    Ok(bleu_stats(pairs, max_n).bleu())
}

/// Which length selects a pair into a bucket.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LengthAxis {
    Source,
    Reference,
    Both,
}

impl FromStr for LengthAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Self::Source),
            "reference" => Ok(Self::Reference),
            "both" => Ok(Self::Both),
            _ => Err(Error::Config(format!("unknown length axis {s:?} (source|reference|both)"))),
        }
    }
}

impl fmt::Display for LengthAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Source => "source",
            Self::Reference => "reference",
            Self::Both => "both",
        })
    }
}

/// One point of a BLEU curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub x: usize,
    pub bleu: f64,
    pub bucket_size: usize,
}

fn in_window(len: usize, lo: usize, window: usize) -> bool {
    len >= lo && len < lo + window
}

/// Whether `p` falls in the bucket `[lo, lo + window − 1]` along `axis`.
pub fn in_length_bucket<W>(p: &EvalPair<W>, axis: LengthAxis, lo: usize, window: usize) -> bool {
    match axis {
        LengthAxis::Source => in_window(p.source_len, lo, window),
        LengthAxis::Reference => in_window(p.reference.len(), lo, window),
        LengthAxis::Both => in_window(p.source_len, lo, window) && in_window(p.reference.len(), lo, window),
    }
}

/// BLEU over sliding inclusive length windows `[L, L + window − 1]`, one
/// point per `L ≥ 0` whose bucket is nonempty.
pub fn bleu_by_length<W: Hash + Eq>(pairs: &[EvalPair<W>], window: usize, axis: LengthAxis) -> Result<Vec<CurvePoint>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be >= 1".into()));
    }
    let max_len = pairs
        .iter()
        .map(|p| p.source_len.max(p.reference.len()))
        .max()
        .unwrap_or(0);
    let mut out = Vec::new();
    for lo in 0..=max_len {
        let bucket: Vec<&EvalPair<W>> = pairs
            .iter()
            .filter(|p| in_length_bucket(p, axis, lo, window))
            .collect();
        if bucket.is_empty() {
            continue;
        }
        out.push(CurvePoint {
            x: lo,
            bleu: bleu_stats(bucket.iter().copied(), 4).bleu(),
            bucket_size: bucket.len(),
        });
    }
    Ok(out)
}

/// Point `m` scores the pairs with fewer than `m` source UNKs, for
/// `m = 1 ..= max observed + 1`. Empty subsets are skipped.
pub fn bleu_by_max_unk<W: Hash + Eq>(pairs: &[EvalPair<W>]) -> Vec<CurvePoint> {
    let top = pairs.iter().map(|p| p.source_unk_count).max().unwrap_or(0);
    let mut out = Vec::new();
    for m in 1..=top + 1 {
        let subset: Vec<&EvalPair<W>> = pairs.iter().filter(|p| p.source_unk_count < m).collect();
        if subset.is_empty() {
            continue;
        }
        out.push(CurvePoint {
            x: m,
            bleu: bleu_stats(subset.iter().copied(), 4).bleu(),
            bucket_size: subset.len(),
        });
    }
    out
}

/// Pairs with no UNK in either the source or the reference.
pub fn no_unk_subset<W: Clone>(pairs: &[EvalPair<W>]) -> Vec<EvalPair<W>> {
    pairs
        .iter()
        .filter(|p| p.source_unk_count == 0 && p.reference_unk_count == 0)
        .cloned()
        .collect()
}

/// Write `x,value,bucket_size` lines with a header.
pub fn write_curve_csv(curve: &[CurvePoint], mut w: impl Write) -> Result<()> {
    writeln!(w, "x,value,bucket_size")?;
    for p in curve {
        writeln!(w, "{},{:.6},{}", p.x, p.bleu, p.bucket_size)?;
    }
    Ok(())
}
