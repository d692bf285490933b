//! Tokenization, vocabularies with UNK mapping, length filtering,
//! minibatching and synthetic toy tasks.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Rng;

pub type TokenId = u32;

pub const UNK: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Number of reserved ids preceding the regular vocabulary.
pub const RESERVED: usize = 3;

pub const UNK_TOKEN: &str = "[UNK]";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Whitespace tokenization.
pub fn tokenize(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Bidirectional token/id map. Ids 0, 1, 2 are UNK, BOS and EOS; regular
/// tokens start at [`RESERVED`] in descending frequency order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Vocabulary holding the reserved tokens only.
    pub fn reserved_only() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("no duplicates")
    }

    /// Build from regular tokens in id order (first gets id 3).
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = vec![UNK_TOKEN.into(), BOS_TOKEN.into(), EOS_TOKEN.into()];
        let mut index = HashMap::new();
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("invalid vocabulary token {tok:?}")));
            }
            if index.contains_key(&tok) || all[..RESERVED].contains(&tok) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary token {tok:?}")));
            }
            index.insert(tok.clone(), all.len() as TokenId);
            all.push(tok);
        }
        Ok(Self { tokens: all, index })
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of regular (non-reserved) entries.
    pub fn capacity(&self) -> usize {
        self.tokens.len() - RESERVED
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: TokenId) -> Result<&str> {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange { id, size: self.tokens.len() })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode_line(&self, line: &str) -> Vec<TokenId> {
        self.encode(&tokenize(line))
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.iter().map(|&id| self.token(id).map(str::to_owned)).collect()
    }

    /// Regular tokens in id order.
    pub fn regular_tokens(&self) -> &[String] {
        &self.tokens[RESERVED..]
    }

    /// One regular token per line; line `n` (0-based) holds id `n + 3`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        for tok in self.regular_tokens() {
            writeln!(w, "{tok}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut toks = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            toks.push(line.to_owned());
        }
        Self::from_tokens(toks)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }
}

/// The `capacity` most frequent tokens of `sentences`.
///
/// Ties in frequency go to the token seen first, so the result is a
/// deterministic function of the stream.
pub fn build_vocab<I, S, W>(sentences: I, capacity: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[W]>,
    W: AsRef<str>,
{
    if capacity == 0 {
        return Err(Error::InvalidArgument("vocabulary capacity must be >= 1".into()));
    }
    // token -> (count, first occurrence)
    let mut counts: HashMap<String, (u64, usize)> = HashMap::new();
    let mut seen = 0usize;
    for sent in sentences {
        for w in sent.as_ref() {
            let w = w.as_ref();
            if [UNK_TOKEN, BOS_TOKEN, EOS_TOKEN].contains(&w) {
                continue;
            }
            let e = counts.entry(w.to_owned()).or_insert((0, seen));
            e.0 += 1;
            seen += 1;
        }
    }
    let mut ranked: Vec<(String, u64, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(capacity);
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _, _)| t))
}

/// A parallel sentence pair in id space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub source_unk_count: usize,
    pub target_unk_count: usize,
}

impl SentencePair {
    pub fn new(source: Vec<TokenId>, target: Vec<TokenId>) -> Self {
        let source_unk_count = count_unk(&source);
        let target_unk_count = count_unk(&target);
        Self {
            source,
            target,
            source_unk_count,
            target_unk_count,
        }
    }
}

pub fn count_unk(ids: &[TokenId]) -> usize {
    ids.iter().filter(|&&id| id == UNK).count()
}

/// Keep pairs whose both sides have at most `max_len` tokens.
pub fn filter_pairs(pairs: Vec<SentencePair>, max_len: usize) -> Result<Vec<SentencePair>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be >= 1".into()));
    }
    Ok(pairs
        .into_iter()
        .filter(|p| p.source.len() <= max_len && p.target.len() <= max_len)
        .collect())
}

/// One minibatch. Decoder outputs are the target followed by EOS, padded to
/// the longest row; `mask[i][t]` is false on padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Indices into the pair slice the batch was drawn from.
    pub indices: Vec<usize>,
    pub sources: Vec<Vec<TokenId>>,
    pub outputs: Vec<Vec<TokenId>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    pub fn from_indices(pairs: &[SentencePair], indices: Vec<usize>) -> Self {
        let width = indices.iter().map(|&i| pairs[i].target.len() + 1).max().unwrap_or(0);
        let mut sources = Vec::with_capacity(indices.len());
        let mut outputs = Vec::with_capacity(indices.len());
        let mut mask = Vec::with_capacity(indices.len());
        for &i in &indices {
            let p = &pairs[i];
            sources.push(p.source.clone());
            let mut out = p.target.clone();
            out.push(EOS);
            let real = out.len();
            out.resize(width, EOS);
            outputs.push(out);
            mask.push((0..width).map(|t| t < real).collect());
        }
        Self {
            indices,
            sources,
            outputs,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Unmasked decoder positions (target tokens plus one EOS per row).
    pub fn token_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }
}

/// One epoch of batches over a seeded random permutation of `pairs`.
pub fn make_batches(pairs: &[SentencePair], batch_size: usize, rng: &mut Rng) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    rng.shuffle(&mut order);
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch::from_indices(pairs, c.to_vec()))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ToyTask {
    Copy,
    Reverse,
}

impl std::str::FromStr for ToyTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(ToyTask::Copy),
            "reverse" => Ok(ToyTask::Reverse),
            other => Err(Error::InvalidArgument(format!("unknown toy task {other:?}"))),
        }
    }
}

/// Toy vocabulary `w0 .. w{n-1}` matching the ids used by [`gen_toy_task`].
pub fn toy_vocabulary(vocab_size: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..vocab_size).map(|i| format!("w{i}"))).expect("distinct tokens")
}

/// Random source sequences over ids `3 .. 3 + vocab_size`, lengths uniform
/// in `len_range` (inclusive), with target = source or reversed source.
pub fn gen_toy_task(
    kind: ToyTask,
    vocab_size: usize,
    len_range: std::ops::RangeInclusive<usize>,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<SentencePair>> {
    if vocab_size < 2 {
        return Err(Error::InvalidArgument("toy vocab_size must be >= 2".into()));
    }
    if len_range.is_empty() || *len_range.start() == 0 {
        return Err(Error::InvalidArgument(format!("invalid toy length range {len_range:?}")));
    }
    let (lo, hi) = (*len_range.start(), *len_range.end());
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rng.below(lo, hi + 1);
        let source: Vec<TokenId> = (0..len)
            .map(|_| (RESERVED + rng.below(0, vocab_size)) as TokenId)
            .collect();
        pairs.push(toy_pair(kind, source));
    }
    Ok(pairs)
}

pub fn toy_pair(kind: ToyTask, source: Vec<TokenId>) -> SentencePair {
    let target = match kind {
        ToyTask::Copy => source.clone(),
        ToyTask::Reverse => source.iter().rev().copied().collect(),
    };
    SentencePair::new(source, target)
}

/// Non-empty lines of a UTF-8 file, preserving empty lines as empty strings.
pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let f = fs::File::open(path)?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map(|s| s.trim_end_matches('\r').to_owned()).map_err(Error::from))
        .collect()
}

/// Space-separated ids, one sequence per line.
pub fn write_id_lines(path: impl AsRef<Path>, seqs: impl IntoIterator<Item = impl AsRef<[TokenId]>>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in seqs {
        let line: Vec<String> = s.as_ref().iter().map(|i| i.to_string()).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_id_lines(path: impl AsRef<Path>) -> Result<Vec<Vec<TokenId>>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .map(|(n, line)| {
            line.split_whitespace()
                .map(|t| {
                    t.parse::<TokenId>()
                        .map_err(|_| Error::InvalidArgument(format!("line {}: bad token id {t:?}", n + 1)))
                })
                .collect()
        })
        .collect()
}
