use abacus::graph::graph_to_string;
use abacus::netgen::{
    generate_dataset, generate_random_network, synthetic_cost, DatasetSpec, Family, GenSpec, SyntheticCostParams,
};
use abacus::{ComputationGraph, OpKind, Optimizer, RunConfig};
use proptest::prelude::*;

fn spec(seed: u64) -> GenSpec {
    GenSpec { family: Family::ALL[(seed % 4) as usize], seed, ..Default::default() }
}

#[test]
fn five_hundred_graphs_validate_and_infer() {
    for seed in 0..500 {
        let s = spec(seed * 7919);
        let g = generate_random_network(&s).unwrap();
        let report = g.validate();
        assert!(report.ok, "seed {seed}: {report}");
        g.infer_shapes(1).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(s.nodes.contains(&g.nodes.len()));
    }
}

#[test]
fn single_node_range() {
    let g = generate_random_network(&GenSpec { nodes: 1..=1, ..Default::default() }).unwrap();
    assert_eq!(g.nodes.len(), 1);
    assert!(g.validate().ok);
}

#[test]
fn merges_are_present_in_branching_families() {
    let merges = (0..50)
        .map(|s| generate_random_network(&GenSpec { family: Family::Inception, seed: s, ..Default::default() }).unwrap())
        .filter(|g| g.nodes.iter().any(|n| matches!(n.op, OpKind::Add | OpKind::Concat)))
        .count();
    assert!(merges > 25, "{merges}");
}

proptest! {
    #[test]
    fn same_seed_same_graph(seed in any::<u64>(), lo in 1usize..30, extra in 0usize..40) {
        let s = GenSpec { nodes: lo..=lo + extra, ..spec(seed) };
        let a = generate_random_network(&s).unwrap();
        let b = generate_random_network(&s).unwrap();
        prop_assert_eq!(graph_to_string(&a), graph_to_string(&b));
        prop_assert!(s.nodes.contains(&a.nodes.len()));
        prop_assert!(a.validate().ok);
        prop_assert!(a.infer_shapes(2).is_ok());
    }

    #[test]
    fn doubling_epochs_doubles_time(seed in 0u64..5000, batch in 1usize..300, epochs in 1usize..5) {
        let g = generate_random_network(&spec(seed)).unwrap();
        let p = SyntheticCostParams::default();
        let cfg = RunConfig { epochs, ..RunConfig::for_graph(&g, batch) };
        let one = synthetic_cost(&g, &cfg, &p).unwrap();
        let two = synthetic_cost(&g, &RunConfig { epochs: 2 * epochs, ..cfg }, &p).unwrap();
        prop_assert!((two.time_s - 2.0 * one.time_s).abs() <= 1e-12 * two.time_s);
        prop_assert_eq!(two.mem_mib, one.mem_mib);
    }

    #[test]
    fn spikes_add_exact_magnitude(seed in 0u64..5000, batch in 1usize..300) {
        let g = generate_random_network(&spec(seed)).unwrap();
        let cfg = RunConfig::for_graph(&g, batch);
        let p = SyntheticCostParams::default();
        let quiet = SyntheticCostParams { spike_threshold: u64::MAX, ..p.clone() };
        let over = g
            .nodes
            .iter()
            .filter(|n| n.op == OpKind::Conv2D)
            .filter(|n| (n.attr("in_channels").unwrap() * n.attr("out_channels").unwrap()) as u64 > p.spike_threshold)
            .count() as f64;
        let diff = synthetic_cost(&g, &cfg, &p).unwrap().mem_mib - synthetic_cost(&g, &cfg, &quiet).unwrap().mem_mib;
        prop_assert_eq!(diff, over * p.spike_mib);
    }
}

#[test]
fn memory_non_decreasing_in_batch() {
    let p = SyntheticCostParams::default();
    for seed in 0..50 {
        let g = generate_random_network(&spec(seed)).unwrap();
        for opt in [Optimizer::Sgd, Optimizer::Adam] {
            let mut last = 0.0;
            for batch in 1..=256 {
                let cfg = RunConfig { optimizer: opt, ..RunConfig::for_graph(&g, batch) };
                let m = synthetic_cost(&g, &cfg, &p).unwrap().mem_mib;
                assert!(m >= last, "seed {seed} batch {batch}");
                last = m;
            }
        }
    }
}

#[test]
fn empty_graph_costs() {
    let g = ComputationGraph::new([3, 32, 32]);
    let p = SyntheticCostParams::default();
    let c = synthetic_cost(&g, &RunConfig::for_graph(&g, 1), &p).unwrap();
    assert_eq!(c.time_s, 0.0);
    // 3*32*32*4 bytes rounds up to one 2 MiB step
    assert_eq!(c.mem_mib, 2.0);
}

#[test]
fn dataset_independent_of_thread_count() {
    let spec = DatasetSpec { graphs: 24, configs_per_graph: 3, seed: 9, ..Default::default() };
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| generate_dataset(&spec).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.dataset.len(), 72);
    for (x, y) in a.graphs.iter().zip(&b.graphs) {
        assert_eq!((x.id.as_str(), &x.graph), (y.id.as_str(), &y.graph));
    }
}
