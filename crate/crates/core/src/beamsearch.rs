//! Beam-search decoding.
//!
//! Pruning uses the raw cumulative log-probability. Whenever an
//! EOS-terminated candidate lands in the top-`width` set of a step it moves
//! to the finished pool and the live width shrinks by one. The finished pool
//! is ranked by log-probability per token (EOS counted). Hypotheses still
//! open after `max_len` tokens are closed with EOS, its probability
//! included, and flagged as forced.

use std::cmp::Ordering;

use crate::corpus::{TokenId, BOS, EOS, UNK};
use crate::decoder::DecoderState;
use crate::error::{Error, Result};
use crate::model::Seq2Seq;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Output length cap in tokens, EOS excluded. `None` means
    /// `3 * source_len + 10`.
    pub max_len: Option<usize>,
    pub exclude_unk: bool,
    pub k_best: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 10,
            max_len: None,
            exclude_unk: true,
            k_best: 10,
        }
    }
}

impl BeamConfig {
    pub fn greedy() -> Self {
        Self {
            width: 1,
            exclude_unk: false,
            k_best: 1,
            ..Self::default()
        }
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(3 * source_len + 10)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("beam width must be >= 1".into()));
        }
        if self.max_len == Some(0) {
            return Err(Error::Config("beam max_len must be >= 1".into()));
        }
        if self.k_best == 0 {
            return Err(Error::Config("k_best must be >= 1".into()));
        }
        Ok(())
    }
}

/// A partial or finished translation.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<T> {
    /// Generated ids, BOS excluded; ends with EOS iff `finished`.
    pub tokens: Vec<TokenId>,
    pub log_prob: T,
    pub state: DecoderState<T>,
    pub finished: bool,
    /// EOS was appended at the length cap rather than chosen by the search.
    pub forced: bool,
}

impl<T: Scalar> Hypothesis<T> {
    /// Log-probability per token.
    pub fn normalized_score(&self) -> Result<T> {
        normalized_score(self.log_prob, self.tokens.len())
    }
}

pub fn normalized_score<T: Scalar>(log_prob: T, len: usize) -> Result<T> {
    if len == 0 {
        return Err(Error::Empty("hypothesis"));
    }
    Ok(log_prob / T::lit(len as f64))
}

/// One ranked output of [`beam_search`].
#[derive(Clone, Debug, PartialEq)]
pub struct Translation<T> {
    /// Output ids without the trailing EOS.
    pub tokens: Vec<TokenId>,
    pub log_prob: T,
    /// `log_prob` divided by the number of generated ids, EOS included.
    pub score: T,
    pub forced: bool,
}

impl<T: Scalar> Translation<T> {
    pub fn neg_log_prob(&self) -> T {
        -self.log_prob
    }
}

/// Best-first order: higher score, then lexicographically smaller tokens.
fn rank<T: Scalar>(sa: T, ta: &[TokenId], sb: T, tb: &[TokenId]) -> Ordering {
    sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then_with(|| ta.cmp(tb))
}

struct Candidate<T> {
    parent: usize,
    token: TokenId,
    log_prob: T,
}

/// Decode `source` and return up to `cfg.k_best` translations, best first.
pub fn beam_search<T: Scalar>(model: &Seq2Seq<T>, source: &[TokenId], cfg: &BeamConfig) -> Result<Vec<Translation<T>>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::Empty("source sentence"));
    }
    let dec = &model.decoder;
    let max_len = cfg.max_len_for(source.len());
    let ctx = model.encode(source)?;

    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: T::zero(),
        state: dec.init_state(&ctx)?,
        finished: false,
        forced: false,
    }];
    let mut finished: Vec<Hypothesis<T>> = Vec::new();
    let mut width = cfg.width;

    for _ in 0..max_len {
        let mut next_states = Vec::with_capacity(live.len());
        let mut cands: Vec<Candidate<T>> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let (state, lp) = dec.step_log_probs(&h.state, prev)?;
            for (k, &l) in lp.iter().enumerate() {
                if cfg.exclude_unk && k as TokenId == UNK {
                    continue;
                }
                cands.push(Candidate {
                    parent: i,
                    token: k as TokenId,
                    log_prob: h.log_prob + l,
                });
            }
            next_states.push(state);
        }
        if let Some(bad) = cands.iter().find(|c| !c.log_prob.is_finite()) {
            return Err(Error::NonFinite(format!(
                "beam search: log-probability of token {} is {}",
                bad.token, bad.log_prob
            )));
        }

        let cmp = |a: &Candidate<T>, b: &Candidate<T>| {
            b.log_prob
                .partial_cmp(&a.log_prob)
                .unwrap_or(Ordering::Equal)
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then_with(|| a.token.cmp(&b.token))
        };
        if cands.len() > width {
            cands.select_nth_unstable_by(width - 1, cmp);
            cands.truncate(width);
        }
        cands.sort_by(cmp);

        let mut survivors = Vec::with_capacity(cands.len());
        for c in cands {
            let mut tokens = live[c.parent].tokens.clone();
            tokens.push(c.token);
            let hyp = Hypothesis {
                tokens,
                log_prob: c.log_prob,
                state: next_states[c.parent].clone(),
                finished: c.token == EOS,
                forced: false,
            };
            if hyp.finished {
                finished.push(hyp);
                width -= 1;
            } else {
                survivors.push(hyp);
            }
        }
        live = survivors;
        if width == 0 || live.is_empty() {
            break;
        }
    }

    for mut h in live {
        let prev = h.tokens.last().copied().unwrap_or(BOS);
        let (state, lp) = dec.step_log_probs(&h.state, prev)?;
        h.log_prob += lp[EOS as usize];
        h.tokens.push(EOS);
        h.state = state;
        h.finished = true;
        h.forced = true;
        finished.push(h);
    }

    let mut ranked = finished
        .into_iter()
        .map(|h| {
            let score = h.normalized_score()?;
            Ok((score, h))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|(sa, a), (sb, b)| rank(*sa, &a.tokens, *sb, &b.tokens));
    Ok(ranked
        .into_iter()
        .take(cfg.k_best)
        .map(|(score, h)| {
            let mut tokens = h.tokens;
            tokens.pop();
            Translation {
                tokens,
                log_prob: h.log_prob,
                score,
                forced: h.forced,
            }
        })
        .collect())
}

/// Stepwise argmax decoding (ties go to the smallest id). Returns the ids
/// without EOS and the log-probability of the sequence closed by EOS, which
/// is appended after `max_len` tokens if not chosen earlier.
pub fn greedy_decode<T: Scalar>(model: &Seq2Seq<T>, source: &[TokenId], max_len: usize) -> Result<(Vec<TokenId>, T)> {
    let ctx = model.encode(source)?;
    let mut state = model.decoder.init_state(&ctx)?;
    let mut prev = BOS;
    let mut out = Vec::new();
    let mut total = T::zero();
    for _ in 0..max_len {
        let (s, lp) = model.decoder.step_log_probs(&state, prev)?;
        let (best, &l) = lp
            .iter()
            .enumerate()
            .fold((0, &lp[0]), |acc, (k, v)| if *v > *acc.1 { (k, v) } else { acc });
        total += l;
        state = s;
        if best as TokenId == EOS {
            break;
        }
        out.push(best as TokenId);
        prev = best as TokenId;
    }
    if out.len() == max_len {
        let (_, lp) = model.decoder.step_log_probs(&state, prev)?;
        total += lp[EOS as usize];
    }
    Ok((out, total))
}
