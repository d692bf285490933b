//! Graphviz DOT rendering of merge trees and soft edge sets.

use std::fmt::Write;

use crate::structure::{EdgeKind, MergeTree, SoftEdge};

/// Quote `s` as a DOT string literal.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out.push('"');
    out
}

fn leaf_id(p: usize) -> String {
    format!("leaf{p}")
}

fn node_id(level: usize, index: usize) -> String {
    if level == 0 {
        leaf_id(index)
    } else {
        format!("n{level}_{index}")
    }
}

fn header(name: &str) -> String {
    format!("digraph {} {{\n  node [fontname=\"Helvetica\"];\n", quote(name))
}

fn leaf_decls(out: &mut String, tokens: &[String]) {
    for (p, tok) in tokens.iter().enumerate() {
        let _ = writeln!(out, "  {} [label={}, shape=box];", leaf_id(p), quote(tok));
    }
    if tokens.len() > 1 {
        let ids: Vec<String> = (0..tokens.len()).map(leaf_id).collect();
        let _ = writeln!(out, "  {{ rank=same; {}; }}", ids.join("; "));
    }
}

/// Hard tree: leaves carry tokens, internal nodes their level and dominant
/// gate symbol, edges point from parent to child.
pub fn tree_to_dot(name: &str, tree: &MergeTree, tokens: &[String]) -> String {
    let mut out = header(name);
    leaf_decls(&mut out, tokens);
    fn walk(t: &MergeTree, out: &mut String) -> String {
        match t {
            MergeTree::Leaf { position } => leaf_id(*position),
            MergeTree::Node {
                level,
                index,
                choice,
                left,
                right,
            } => {
                let id = node_id(*level, *index);
                let label = format!("L{level} {}", choice.symbol());
                let _ = writeln!(out, "  {id} [label={}, shape=ellipse];", quote(&label));
                let l = walk(left, out);
                let r = walk(right, out);
                let _ = writeln!(out, "  {id} -> {l};");
                let _ = writeln!(out, "  {id} -> {r};");
                id
            }
        }
    }
    walk(tree, &mut out);
    out.push_str("}\n");
    out
}

/// Soft view: every pyramid node that touches a kept edge, edges labelled
/// with their weight to three decimals.
pub fn edges_to_dot(name: &str, edges: &[SoftEdge], tokens: &[String]) -> String {
    let mut out = header(name);
    leaf_decls(&mut out, tokens);
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for e in edges {
        for n in [e.parent, e.child] {
            if n.0 > 0 && !seen.contains(&n) {
                seen.push(n);
            }
        }
    }
    seen.sort_unstable();
    for (t, j) in seen {
        let _ = writeln!(out, "  {} [label={}, shape=ellipse];", node_id(t, j), quote(&format!("L{t}")));
    }
    for e in edges {
        let style = match e.kind {
            EdgeKind::Merge => "solid",
            EdgeKind::CopyLeft | EdgeKind::CopyRight => "dashed",
        };
        let _ = writeln!(
            out,
            "  {} -> {} [label={}, style={style}];",
            node_id(e.parent.0, e.parent.1),
            node_id(e.child.0, e.child.1),
            quote(&format!("{:.3}", e.weight))
        );
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::GateChoice;

    fn toks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn single_leaf() {
        let dot = tree_to_dot("s", &MergeTree::Leaf { position: 0 }, &toks(1));
        assert_eq!(dot.matches("[label=").count(), 1);
        assert!(!dot.contains("->"));
    }

    #[test]
    fn escapes_quotes() {
        assert_eq!(quote("a\"b\\"), "\"a\\\"b\\\\\"");
    }

    #[test]
    fn soft_labels_three_decimals() {
        let e = SoftEdge {
            parent: (1, 0),
            child: (0, 1),
            kind: EdgeKind::CopyRight,
            weight: 0.12345,
        };
        let dot = edges_to_dot("s", &[e], &toks(2));
        assert!(dot.contains("n1_0 -> leaf1 [label=\"0.123\""));
        let tree = MergeTree::Node {
            level: 1,
            index: 0,
            choice: GateChoice::Merge,
            left: Box::new(MergeTree::Leaf { position: 0 }),
            right: Box::new(MergeTree::Leaf { position: 1 }),
        };
        assert_eq!(tree_to_dot("s", &tree, &toks(2)).matches("->").count(), 2);
    }
}
