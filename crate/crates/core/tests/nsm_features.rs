mod common;

use abacus::features::{count_flops, count_layers, count_params, slot, BASE_COLUMNS};
use abacus::nsm::flatten_nsm;
use abacus::{
    build_nsm, extract_features, ComputationGraph, OpKind, OperatorNode, OperatorVocabulary,
    RunConfig, Structural,
};
use common::{conv, permuted, random_graph, sequential_net};
use proptest::prelude::*;

fn edge_pairs(g: &ComputationGraph) -> Vec<(OpKind, OpKind)> {
    let op = |id| g.node(id).unwrap().op;
    g.edges.iter().map(|&(a, b)| (op(a), op(b))).collect()
}

/// Disjoint union, second graph's ids shifted past the first's.
fn union(a: &ComputationGraph, b: &ComputationGraph) -> ComputationGraph {
    let shift = a.next_id();
    let b = b.relabel(|id| id + shift);
    let mut out = a.clone();
    out.nodes.extend(b.nodes);
    out.edges.extend(b.edges);
    out
}

proptest! {
    #[test]
    fn nsm_counts_every_edge_once(seed in 0u64..10_000) {
        let g = random_graph(seed);
        let v = OperatorVocabulary::default();
        let m = build_nsm(&g, &v).unwrap();
        prop_assert_eq!(m.total(), g.edges.len() as u64);
        prop_assert_eq!(flatten_nsm(&m).iter().sum::<u64>(), g.edges.len() as u64);
        for &src in v.kinds() {
            for &dst in v.kinds() {
                let expect = edge_pairs(&g).iter().filter(|p| **p == (src, dst)).count() as u64;
                prop_assert_eq!(m.get(src, dst), expect);
            }
        }
    }

    #[test]
    fn nsm_ignores_node_ids(seed in 0u64..10_000, perm in any::<u64>()) {
        let g = random_graph(seed);
        let v = OperatorVocabulary::default();
        prop_assert_eq!(build_nsm(&g, &v).unwrap(), build_nsm(&permuted(&g, perm), &v).unwrap());
    }

    #[test]
    fn nsm_is_additive_over_disjoint_union(a in 0u64..10_000, b in 0u64..10_000) {
        let (ga, gb) = (random_graph(a), random_graph(b));
        let v = OperatorVocabulary::default();
        let sum: Vec<u64> = flatten_nsm(&build_nsm(&ga, &v).unwrap())
            .iter()
            .zip(flatten_nsm(&build_nsm(&gb, &v).unwrap()))
            .map(|(x, y)| x + y)
            .collect();
        prop_assert_eq!(flatten_nsm(&build_nsm(&union(&ga, &gb), &v).unwrap()), sum);
    }

    #[test]
    fn counters_match_enumeration(seed in any::<u64>()) {
        let (g, flops, params) = sequential_net(seed);
        let shaped = g.infer_shapes(1).unwrap();
        prop_assert_eq!(count_params(&shaped).unwrap(), params);
        prop_assert_eq!(count_flops(&shaped).unwrap(), flops);
    }

    #[test]
    fn counters_invariant_under_relabelling(seed in 0u64..10_000, perm in any::<u64>()) {
        let g = random_graph(seed).infer_shapes(1).unwrap();
        let p = permuted(&g, perm);
        prop_assert_eq!(count_params(&g).unwrap(), count_params(&p).unwrap());
        prop_assert_eq!(count_flops(&g).unwrap(), count_flops(&p).unwrap());
    }

    #[test]
    fn batch_changes_only_its_slot(seed in 0u64..10_000, b1 in 1usize..512, b2 in 1usize..512) {
        let g = random_graph(seed);
        let s = Structural::from_nsm(&build_nsm(&g, &OperatorVocabulary::default()).unwrap());
        let f1 = extract_features(&g, &RunConfig::for_graph(&g, b1), &s).unwrap();
        let f2 = extract_features(&g, &RunConfig::for_graph(&g, b2), &s).unwrap();
        prop_assert_eq!(f1.values.len(), BASE_COLUMNS.len() + 144);
        for (i, (x, y)) in f1.values.iter().zip(&f2.values).enumerate() {
            if i != slot::BATCH_SIZE {
                prop_assert_eq!(x, y);
            }
        }
    }
}

#[test]
fn hundred_random_graphs_match_oracle() {
    for seed in 0..100 {
        let (g, flops, params) = sequential_net(seed);
        let shaped = g.infer_shapes(1).unwrap();
        assert_eq!(count_params(&shaped).unwrap(), params, "seed {seed}");
        assert_eq!(count_flops(&shaped).unwrap(), flops, "seed {seed}");
    }
}

#[test]
fn conv_spot_values() {
    let mut g = ComputationGraph::new([3, 32, 32]);
    g.add_node(conv(0, 3, 16, 3, 1, 1));
    let cfg = RunConfig::for_graph(&g, 1);
    let s = Structural::from_nsm(&build_nsm(&g, &OperatorVocabulary::default()).unwrap());
    let f = extract_features(&g, &cfg, &s).unwrap();
    assert_eq!(f.values[slot::FLOPS], 884_736.0);
    assert_eq!(f.values[slot::PARAMS], 448.0);
    assert!(f.structural().iter().all(|x| *x == 0.0));

    let mut lin = ComputationGraph::new([512, 1, 1]);
    lin.add_node(
        OperatorNode::new(0, OpKind::Linear)
            .with_attr("features_in", 512)
            .with_attr("features_out", 10),
    );
    assert_eq!(count_params(&lin).unwrap(), 5130);
}

#[test]
fn seven_operator_example() {
    let g = abacus::load_graph(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/data/small_cnn.json")).unwrap();
    assert_eq!(g.nodes.len(), 7);
    let kinds: std::collections::BTreeSet<_> = g.nodes.iter().map(|n| n.op.name()).collect();
    assert_eq!(kinds.len(), 4);
    assert_eq!(count_layers(&g), 7);
    let m = build_nsm(&g, &OperatorVocabulary::default()).unwrap();
    assert_eq!(m.get(OpKind::Conv2D, OpKind::BatchNorm2D), 2);
    assert_eq!(m.total(), 6);
}

#[test]
fn conv_flops_scale_with_output_area() {
    let flops = |hw: usize| {
        let mut g = ComputationGraph::new([4, hw, hw]);
        g.add_node(conv(0, 4, 8, 3, 1, 1));
        count_flops(&g.infer_shapes(1).unwrap()).unwrap()
    };
    assert_eq!(flops(16) * 4, flops(32));
}
