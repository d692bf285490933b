//! Parse-like structures recovered from grConv gate records.
//!
//! Pyramid node `(t, j)` (level `t`, 0-based index `j`) covers source
//! positions `j ..= j + t`; its children are `(t − 1, j)` and `(t − 1, j + 1)`.
//!
//! Hard mode reads each node's dominant gate and builds a spanning binary
//! tree top-down:
//!
//! * a **left copy** keeps the left child's subtree and attaches the rightmost
//!   position as a sibling leaf (a right copy is the mirror image);
//! * a **merge** splits its span where the left child's representation ends.
//!   Copies are followed down to the node whose merge actually produced that
//!   representation, so the split falls on the true constituent boundary.
//!
//! Soft mode keeps every pyramid edge whose gate weight exceeds a threshold.

use std::fmt;

use crate::error::{Error, Result};
use crate::grconv::{GateRecord, OMEGA_C, OMEGA_L, OMEGA_R};
use crate::scalar::Scalar;

/// Default soft-mode threshold on edge weights.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateChoice {
    Merge,
    Left,
    Right,
}

impl GateChoice {
    /// Argmax of a triple; ties resolve in the order merge, left, right.
    pub fn dominant<T: Scalar>(w: [T; 3]) -> Self {
        let mut best = OMEGA_C;
        for k in [OMEGA_L, OMEGA_R] {
            if w[k] > w[best] {
                best = k;
            }
        }
        match best {
            OMEGA_C => GateChoice::Merge,
            OMEGA_L => GateChoice::Left,
            _ => GateChoice::Right,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            GateChoice::Merge => "c",
            GateChoice::Left => "l",
            GateChoice::Right => "r",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MergeTree {
    Leaf {
        position: usize,
    },
    Node {
        level: usize,
        index: usize,
        choice: GateChoice,
        left: Box<MergeTree>,
        right: Box<MergeTree>,
    },
}

impl MergeTree {
    /// Leaf positions in order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk_leaves(&mut out);
        out
    }

    fn walk_leaves(&self, out: &mut Vec<usize>) {
        match self {
            MergeTree::Leaf { position } => out.push(*position),
            MergeTree::Node { left, right, .. } => {
                left.walk_leaves(out);
                right.walk_leaves(out);
            }
        }
    }

    pub fn num_internal(&self) -> usize {
        match self {
            MergeTree::Leaf { .. } => 0,
            MergeTree::Node { left, right, .. } => 1 + left.num_internal() + right.num_internal(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, MergeTree::Leaf { .. })
    }
}

/// Bracketed rendering, e.g. `((0 1) 2)`.
impl fmt::Display for MergeTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeTree::Leaf { position } => write!(f, "{position}"),
            MergeTree::Node { left, right, .. } => write!(f, "({left} {right})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// Child feeds the fresh merge activation (weight `ω_c`).
    Merge,
    /// Node copies its left child (weight `ω_l`).
    CopyLeft,
    /// Node copies its right child (weight `ω_r`).
    CopyRight,
}

/// A weighted pyramid edge from `child` up to `parent`, both as `(level, index)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftEdge {
    pub parent: (usize, usize),
    pub child: (usize, usize),
    pub kind: EdgeKind,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractMode {
    Hard,
    Soft,
}

impl std::str::FromStr for ExtractMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(ExtractMode::Hard),
            "soft" => Ok(ExtractMode::Soft),
            other => Err(Error::InvalidArgument(format!("unknown extraction mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Structure {
    Tree(MergeTree),
    Edges(Vec<SoftEdge>),
}

pub fn extract_tree<T: Scalar>(rec: &GateRecord<T>, mode: ExtractMode, threshold: f64) -> Result<Structure> {
    match mode {
        ExtractMode::Hard => hard_tree(rec).map(Structure::Tree),
        ExtractMode::Soft => soft_edges(rec, threshold).map(Structure::Edges),
    }
}

/// Spanning binary tree from the dominant gate of every node.
pub fn hard_tree<T: Scalar>(rec: &GateRecord<T>) -> Result<MergeTree> {
    let n = rec.source_len();
    check_shape(rec)?;
    let choices: Vec<Vec<GateChoice>> = (1..n)
        .map(|t| rec.level(t).iter().map(|&w| GateChoice::dominant(w)).collect())
        .collect();
    let chooser = Chooser { choices };
    Ok(chooser.build(n - 1, 0))
}

struct Chooser {
    /// `choices[t - 1][j]`
    choices: Vec<Vec<GateChoice>>,
}

impl Chooser {
    fn choice(&self, t: usize, j: usize) -> GateChoice {
        self.choices[t - 1][j]
    }

    /// Last position covered by the node whose activation `(t, j)` carries.
    fn representation_end(&self, mut t: usize, mut j: usize) -> usize {
        while t > 0 {
            match self.choice(t, j) {
                GateChoice::Merge => break,
                GateChoice::Left => t -= 1,
                GateChoice::Right => {
                    t -= 1;
                    j += 1;
                }
            }
        }
        j + t
    }

    fn build(&self, t: usize, j: usize) -> MergeTree {
        if t == 0 {
            return MergeTree::Leaf { position: j };
        }
        let choice = self.choice(t, j);
        let (left, right) = match choice {
            GateChoice::Left => (self.build(t - 1, j), MergeTree::Leaf { position: j + t }),
            GateChoice::Right => (MergeTree::Leaf { position: j }, self.build(t - 1, j + 1)),
            GateChoice::Merge => {
                let split = self.representation_end(t - 1, j) + 1;
                (self.build(split - 1 - j, j), self.build(j + t - split, split))
            }
        };
        MergeTree::Node {
            level: t,
            index: j,
            choice,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Every pyramid edge with weight strictly above `threshold`.
pub fn soft_edges<T: Scalar>(rec: &GateRecord<T>, threshold: f64) -> Result<Vec<SoftEdge>> {
    check_shape(rec)?;
    let mut edges = Vec::new();
    for (t, j, w) in rec.iter() {
        let w = w.map(|x| x.to_f64_lossy());
        let candidates = [
            ((t - 1, j), EdgeKind::Merge, w[OMEGA_C]),
            ((t - 1, j + 1), EdgeKind::Merge, w[OMEGA_C]),
            ((t - 1, j), EdgeKind::CopyLeft, w[OMEGA_L]),
            ((t - 1, j + 1), EdgeKind::CopyRight, w[OMEGA_R]),
        ];
        for (child, kind, weight) in candidates {
            if weight > threshold {
                edges.push(SoftEdge {
                    parent: (t, j),
                    child,
                    kind,
                    weight,
                });
            }
        }
    }
    Ok(edges)
}

fn check_shape<T: Scalar>(rec: &GateRecord<T>) -> Result<()> {
    let n = rec.source_len();
    if n == 0 || rec.depth() + 1 != n {
        return Err(Error::InvalidArgument("inconsistent gate record".into()));
    }
    for t in 1..n {
        if rec.level(t).len() != n - t {
            return Err(Error::InvalidArgument(format!("inconsistent gate record at level {t}")));
        }
    }
    Ok(())
}
