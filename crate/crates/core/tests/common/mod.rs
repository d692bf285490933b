//! Helpers shared by the integration tests and the acceptance runner.
//! Everything here is written independently of the library's own search,
//! scoring and rendering code so it can serve as an oracle.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use grnmt::corpus::{TokenId, EOS, RESERVED, UNK};
use grnmt::model::{EncoderKind, ModelDims, Seq2Seq};
use grnmt::numerics::{finite_diff_gradient, relative_error, Rng};
use grnmt::ParamSet;

pub fn tiny_dims(kind: EncoderKind, d: usize, d_emb: usize, src_words: usize, tgt_words: usize) -> ModelDims {
    ModelDims {
        kind,
        d_emb,
        d_hidden: d,
        d_ctx: d,
        src_vocab: RESERVED + src_words,
        tgt_vocab: RESERVED + tgt_words,
    }
}

/// A model with every tensor (biases and orthogonal blocks included) drawn
/// from N(0, sigma²), so no gradient entry is structurally tiny.
pub fn dense_random_model(dims: ModelDims, sigma: f64, rng: &mut Rng) -> Seq2Seq<f64> {
    let mut m = Seq2Seq::<f64>::zeros(dims).unwrap();
    for (_, t) in m.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = sigma * rng.normal::<f64>();
        }
    }
    m
}

pub fn random_sentence(rng: &mut Rng, vocab: usize, lo: usize, hi: usize) -> Vec<TokenId> {
    let len = rng.below(lo, hi + 1);
    (0..len).map(|_| rng.below(RESERVED, vocab) as TokenId).collect()
}

pub struct GradReport {
    pub max_rel: f64,
    pub max_abs: f64,
    pub worst: String,
    /// (analytic, numeric) at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
    /// Entries above 1e-4 relative error and the largest |analytic| among them.
    pub over_tolerance: usize,
    pub largest_failing: f64,
}

/// Compare the analytic gradient of the sequence NLL against central
/// differences for every parameter.
pub fn gradient_check(model: &Seq2Seq<f64>, source: &[TokenId], target: &[TokenId], eps: f64) -> GradReport {
    let mut outputs = target.to_vec();
    outputs.push(EOS);
    let mut grads = model.zeros_like();
    model.loss_and_gradient(source, &outputs, None, &mut grads).unwrap();
    let analytic = grads.flatten();

    let theta = model.flatten();
    let mut probe = model.clone();
    let numeric = finite_diff_gradient(
        |th: &[f64]| {
            probe.assign_flat(th).unwrap();
            probe.sequence_nll(source, target).unwrap()
        },
        &theta,
        eps,
    )
    .unwrap();

    let mut names = Vec::with_capacity(theta.len());
    for (name, t) in model.tensors() {
        for i in 0..t.len() {
            names.push(format!("{name}[{i}]"));
        }
    }
    let mut report = GradReport {
        max_rel: 0.0,
        max_abs: 0.0,
        worst: String::new(),
        worst_pair: (0.0, 0.0),
        checked: theta.len(),
        over_tolerance: 0,
        largest_failing: 0.0,
    };
    for ((a, b), name) in analytic.iter().zip(&numeric).zip(names) {
        report.max_abs = report.max_abs.max((a - b).abs());
        let r = relative_error(*a, *b, 1e-8);
        if r >= 1e-4 {
            report.over_tolerance += 1;
            report.largest_failing = report.largest_failing.max(a.abs());
        }
        if r > report.max_rel {
            report.max_rel = r;
            report.worst = name;
            report.worst_pair = (*a, *b);
        }
    }
    report
}

/// Best translation by exhaustive enumeration of every body of at most
/// `max_len` tokens, each closed by EOS and scored by log-probability per
/// token with EOS counted. Returns (tokens, normalized score,
/// log-probability, whether the body has the full `max_len` tokens).
pub fn exhaustive_best(
    model: &Seq2Seq<f64>,
    source: &[TokenId],
    max_len: usize,
    exclude_unk: bool,
) -> (Vec<TokenId>, f64, f64, bool) {
    let dec = &model.decoder;
    let ctx = model.encode(source).unwrap();
    let vocab = dec.vocab_size();
    let mut best: Option<(Vec<TokenId>, f64, f64, bool)> = None;
    let mut consider = |tokens: Vec<TokenId>, logp: f64, len: usize, forced: bool| {
        let score = logp / len as f64;
        let better = match &best {
            None => true,
            Some((bt, bs, _, _)) => score > *bs || (score == *bs && tokens < *bt),
        };
        if better {
            best = Some((tokens, score, logp, forced));
        }
    };
    // Depth-first over prefixes that have not emitted EOS.
    let mut stack = vec![(Vec::<TokenId>::new(), 0.0f64, dec.init_state(&ctx).unwrap())];
    while let Some((prefix, logp, state)) = stack.pop() {
        let prev = prefix.last().copied().unwrap_or(grnmt::corpus::BOS);
        let (next, lp) = dec.step_log_probs(&state, prev).unwrap();
        for k in 0..vocab {
            let id = k as TokenId;
            if exclude_unk && id == UNK {
                continue;
            }
            let l = logp + lp[k];
            if id == EOS {
                consider(prefix.clone(), l, prefix.len() + 1, prefix.len() == max_len);
            } else if prefix.len() < max_len {
                let mut p = prefix.clone();
                p.push(id);
                stack.push((p, l, next.clone()));
            }
        }
    }
    best.unwrap()
}

/// Step-by-step argmax decoding written against the decoder step API.
pub fn argmax_oracle(model: &Seq2Seq<f64>, source: &[TokenId], max_len: usize) -> (Vec<TokenId>, f64, bool) {
    let dec = &model.decoder;
    let mut state = dec.init_state(&model.encode(source).unwrap()).unwrap();
    let mut prev = grnmt::corpus::BOS;
    let mut out = Vec::new();
    let mut logp = 0.0;
    for _ in 0..max_len {
        let (s, lp) = dec.step_log_probs(&state, prev).unwrap();
        let mut arg = 0;
        for k in 1..lp.len() {
            if lp[k] > lp[arg] {
                arg = k;
            }
        }
        logp += lp[arg];
        state = s;
        if arg as TokenId == EOS {
            return (out, logp, false);
        }
        out.push(arg as TokenId);
        prev = arg as TokenId;
    }
    let (_, lp) = dec.step_log_probs(&state, prev).unwrap();
    (out, logp + lp[EOS as usize], true)
}

/// Straightforward BLEU-4: clipped n-gram counts via hash maps, geometric
/// mean of the four precisions, brevity penalty exp(1 - r/h) when h < r.
pub fn reference_bleu(pairs: &[(Vec<&str>, Vec<&str>)]) -> f64 {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut h, mut r) = (0usize, 0usize);
    for (hyp, rf) in pairs {
        h += hyp.len();
        r += rf.len();
        for n in 1..=4 {
            let mut ref_counts: HashMap<&[&str], usize> = HashMap::new();
            for g in rf.windows(n) {
                *ref_counts.entry(g).or_default() += 1;
            }
            let mut hyp_counts: HashMap<&[&str], usize> = HashMap::new();
            for g in hyp.windows(n) {
                *hyp_counts.entry(g).or_default() += 1;
            }
            for (g, c) in hyp_counts {
                matches[n - 1] += c.min(ref_counts.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if h == 0 || (0..4).any(|i| matches[i] == 0) {
        return 0.0;
    }
    let log_p: f64 = (0..4).map(|i| (matches[i] as f64 / totals[i] as f64).ln()).sum::<f64>() / 4.0;
    let bp = if h < r { (1.0 - r as f64 / h as f64).exp() } else { 1.0 };
    bp * log_p.exp()
}

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// Parsed DOT digraph in the subset the renderer emits.
#[derive(Debug, Default)]
pub struct DotGraph {
    pub name: String,
    pub nodes: HashMap<String, HashMap<String, String>>,
    pub edges: Vec<(String, String, HashMap<String, String>)>,
    pub rank_groups: Vec<Vec<String>>,
}

fn is_id(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && !s.starts_with(|c: char| c.is_ascii_digit())
}

/// Split `k=v, k="v"` lists, honouring quotes and backslash escapes.
fn parse_attrs(s: &str) -> Result<HashMap<String, String>, String> {
    let mut out = HashMap::new();
    let chars: Vec<char> = s.chars().collect();
    let mut i = 0;
    let skip_ws = |i: &mut usize| {
        while *i < chars.len() && (chars[*i].is_whitespace() || chars[*i] == ',') {
            *i += 1;
        }
    };
    loop {
        skip_ws(&mut i);
        if i >= chars.len() {
            break;
        }
        let start = i;
        while i < chars.len() && chars[i] != '=' {
            i += 1;
        }
        if i >= chars.len() {
            return Err(format!("attribute without '=': {s:?}"));
        }
        let key: String = chars[start..i].iter().collect::<String>().trim().to_string();
        if !is_id(&key) {
            return Err(format!("bad attribute key {key:?}"));
        }
        i += 1;
        let value = if chars.get(i) == Some(&'"') {
            i += 1;
            let mut v = String::new();
            loop {
                match chars.get(i) {
                    None => return Err("unterminated string".into()),
                    Some('\\') => {
                        v.push(*chars.get(i + 1).ok_or("dangling escape")?);
                        i += 2;
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some(c) => {
                        v.push(*c);
                        i += 1;
                    }
                }
            }
            v
        } else {
            let start = i;
            while i < chars.len() && chars[i] != ',' && !chars[i].is_whitespace() {
                i += 1;
            }
            let v: String = chars[start..i].iter().collect();
            if !is_id(&v) {
                return Err(format!("bad bare value {v:?}"));
            }
            v
        };
        out.insert(key, value);
    }
    Ok(out)
}

fn split_stmt_attrs(stmt: &str) -> Result<(&str, HashMap<String, String>), String> {
    match stmt.find('[') {
        None => Ok((stmt.trim(), HashMap::new())),
        Some(open) => {
            let close = stmt.rfind(']').ok_or("missing ']'")?;
            if stmt[close + 1..].trim() != "" {
                return Err(format!("text after attributes: {stmt:?}"));
            }
            Ok((stmt[..open].trim(), parse_attrs(&stmt[open + 1..close])?))
        }
    }
}

/// Line-oriented parser for the renderer's output. Rejects anything outside
/// the expected grammar, undeclared edge endpoints and duplicate nodes.
pub fn parse_dot(text: &str) -> Result<DotGraph, String> {
    let mut lines = text.lines();
    let first = lines.next().ok_or("empty document")?;
    let rest = first.strip_prefix("digraph ").ok_or("missing 'digraph'")?;
    let rest = rest.strip_suffix(" {").ok_or("missing '{'")?;
    let name = rest.strip_prefix('"').and_then(|r| r.strip_suffix('"')).ok_or("graph name must be quoted")?;
    let mut g = DotGraph {
        name: name.to_string(),
        ..Default::default()
    };
    let mut closed = false;
    for line in lines {
        let l = line.trim();
        if closed {
            if !l.is_empty() {
                return Err(format!("content after closing brace: {l:?}"));
            }
            continue;
        }
        if l == "}" {
            closed = true;
            continue;
        }
        if let Some(inner) = l.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            let mut parts = inner.split(';').map(str::trim).filter(|s| !s.is_empty());
            if parts.next() != Some("rank=same") {
                return Err(format!("unexpected subgraph {l:?}"));
            }
            let ids: Vec<String> = parts.map(str::to_string).collect();
            if ids.iter().any(|i| !is_id(i)) {
                return Err(format!("bad id in rank group {l:?}"));
            }
            g.rank_groups.push(ids);
            continue;
        }
        let stmt = l.strip_suffix(';').ok_or_else(|| format!("statement without ';': {l:?}"))?;
        let (head, attrs) = split_stmt_attrs(stmt)?;
        if head == "node" {
            continue;
        }
        if let Some((a, b)) = head.split_once("->") {
            let (a, b) = (a.trim(), b.trim());
            if !is_id(a) || !is_id(b) {
                return Err(format!("bad edge {head:?}"));
            }
            g.edges.push((a.to_string(), b.to_string(), attrs));
        } else {
            if !is_id(head) {
                return Err(format!("bad node id {head:?}"));
            }
            if g.nodes.insert(head.to_string(), attrs).is_some() {
                return Err(format!("node {head} declared twice"));
            }
        }
    }
    if !closed {
        return Err("missing closing brace".into());
    }
    for (a, b, _) in &g.edges {
        for n in [a, b] {
            if !g.nodes.contains_key(n) {
                return Err(format!("edge endpoint {n} not declared"));
            }
        }
    }
    for grp in &g.rank_groups {
        for n in grp {
            if !g.nodes.contains_key(n) {
                return Err(format!("rank group member {n} not declared"));
            }
        }
    }
    Ok(g)
}

/// True if the edges form a single binary tree over all declared nodes with
/// the leaves exactly `leaf_ids`.
pub fn is_binary_tree(g: &DotGraph, leaf_ids: &HashSet<String>) -> bool {
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut indeg: HashMap<&str, usize> = g.nodes.keys().map(|k| (k.as_str(), 0)).collect();
    for (a, b, _) in &g.edges {
        children.entry(a).or_default().push(b);
        *indeg.get_mut(b.as_str()).unwrap() += 1;
    }
    let roots: Vec<&str> = indeg.iter().filter(|(_, &d)| d == 0).map(|(k, _)| *k).collect();
    if roots.len() != 1 || indeg.values().any(|&d| d > 1) {
        return false;
    }
    for (n, _) in &g.nodes {
        let c = children.get(n.as_str()).map_or(0, Vec::len);
        let leaf = leaf_ids.contains(n);
        if (leaf && c != 0) || (!leaf && c != 2) {
            return false;
        }
    }
    // Reachability from the root covers every node (rules out cycles too).
    let mut seen = HashSet::new();
    let mut stack = vec![roots[0]];
    while let Some(n) = stack.pop() {
        if !seen.insert(n) {
            return false;
        }
        stack.extend(children.get(n).into_iter().flatten().copied());
    }
    seen.len() == g.nodes.len()
}
