mod common;

use std::collections::HashSet;

use common::{is_binary_tree, parse_dot, tiny_dims};
use grnmt::dot::{edges_to_dot, tree_to_dot};
use grnmt::grconv::GateRecord;
use grnmt::model::EncoderKind;
use grnmt::numerics::{softmax, Rng};
use grnmt::structure::{hard_tree, soft_edges, MergeTree};
use grnmt::training::init_model;
use proptest::prelude::*;

fn random_record(t: usize, rng: &mut Rng, sharp: f64) -> GateRecord<f64> {
    let levels = (1..t)
        .map(|lvl| {
            (0..t - lvl)
                .map(|_| {
                    let z: Vec<f64> = (0..3).map(|_| sharp * rng.normal::<f64>()).collect();
                    let p = softmax(&z).unwrap();
                    [p[0], p[1], p[2]]
                })
                .collect()
        })
        .collect();
    GateRecord::new(t, levels).unwrap()
}

fn tokens(t: usize) -> Vec<String> {
    (0..t).map(|i| format!("w\"{i}")).collect()
}

/// Every internal node must cover a contiguous span split between its
/// children, and the root must span the whole sentence.
fn spans(tree: &MergeTree) -> (usize, usize) {
    match tree {
        MergeTree::Leaf { position } => (*position, *position),
        MergeTree::Node { left, right, .. } => {
            let (a, b) = spans(left);
            let (c, d) = spans(right);
            assert_eq!(b + 1, c, "children not adjacent");
            (a, d)
        }
    }
}

#[test]
fn hard_trees_render_as_valid_binary_trees() {
    let mut rng = Rng::new(31);
    for t in 1..=12 {
        for _ in 0..10 {
            let rec = random_record(t, &mut rng, 3.0);
            let tree = hard_tree(&rec).unwrap();
            assert_eq!(tree.leaves(), (0..t).collect::<Vec<_>>());
            assert_eq!(tree.num_internal(), t - 1);
            assert_eq!(spans(&tree), (0, t - 1));
            let dot = tree_to_dot("s", &tree, &tokens(t));
            let g = parse_dot(&dot).unwrap_or_else(|e| panic!("{e}\n{dot}"));
            assert_eq!(g.nodes.len(), 2 * t - 1);
            assert_eq!(g.edges.len(), 2 * (t - 1));
            let leaves: HashSet<String> = (0..t).map(|p| format!("leaf{p}")).collect();
            assert!(is_binary_tree(&g, &leaves));
            for p in 0..t {
                assert_eq!(g.nodes[&format!("leaf{p}")]["label"], format!("w\"{p}"));
            }
        }
    }
}

#[test]
fn soft_edges_respect_threshold_and_render() {
    let mut rng = Rng::new(7);
    for t in 2..=8 {
        let rec = random_record(t, &mut rng, 1.0);
        for threshold in [0.0, 0.1, 0.5] {
            let edges = soft_edges(&rec, threshold).unwrap();
            for e in &edges {
                assert!(e.weight > threshold);
                assert_eq!(e.parent.0, e.child.0 + 1);
            }
            let dot = edges_to_dot("soft", &edges, &tokens(t));
            let g = parse_dot(&dot).unwrap_or_else(|e| panic!("{e}\n{dot}"));
            assert_eq!(g.edges.len(), edges.len());
            for ((_, _, attrs), e) in g.edges.iter().zip(&edges) {
                assert_eq!(attrs["label"], format!("{:.3}", e.weight));
            }
        }
    }
}

#[test]
fn encoder_records_have_pyramid_shape() {
    let model = init_model::<f64>(tiny_dims(EncoderKind::GrConv, 5, 4, 9, 4), 17, 0.01).unwrap();
    for t in 1..=12usize {
        let src: Vec<u32> = (0..t).map(|i| 3 + (i % 9) as u32).collect();
        let rec = model.gate_record(&src).unwrap();
        assert_eq!(rec.source_len(), t);
        assert_eq!(rec.num_nodes(), t * (t - 1) / 2);
        for lvl in 1..t {
            assert_eq!(rec.level(lvl).len(), t - lvl);
        }
        let tree = hard_tree(&rec).unwrap();
        assert_eq!(tree.num_internal(), t - 1);
    }
}

proptest! {
    #[test]
    fn any_record_yields_a_spanning_tree(t in 1usize..10, seed in any::<u64>(), sharp in 0.1f64..20.0) {
        let rec = random_record(t, &mut Rng::new(seed), sharp);
        let tree = hard_tree(&rec).unwrap();
        prop_assert_eq!(tree.leaves(), (0..t).collect::<Vec<_>>());
        prop_assert_eq!(tree.num_internal(), t - 1);
    }
}
