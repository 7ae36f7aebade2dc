#![allow(dead_code)]

use abacus::netgen::{generate_random_network, Family, GenSpec};
use abacus::{ComputationGraph, NodeId, OpKind, OperatorNode};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn conv(id: NodeId, cin: i64, cout: i64, k: i64, s: i64, p: i64) -> OperatorNode {
    OperatorNode::new(id, OpKind::Conv2D)
        .with_attr("kernel_h", k)
        .with_attr("kernel_w", k)
        .with_attr("stride", s)
        .with_attr("padding", p)
        .with_attr("in_channels", cin)
        .with_attr("out_channels", cout)
}

pub fn pool(id: NodeId, op: OpKind, k: i64, s: i64, p: i64) -> OperatorNode {
    OperatorNode::new(id, op)
        .with_attr("kernel_h", k)
        .with_attr("kernel_w", k)
        .with_attr("stride", s)
        .with_attr("padding", p)
}

/// Netgen graph `i` of a seeded stream, cycling through the families.
pub fn random_graph(seed: u64) -> ComputationGraph {
    let spec = GenSpec {
        family: Family::ALL[(seed % 4) as usize],
        seed,
        ..Default::default()
    };
    generate_random_network(&spec).expect("generator produces valid graphs")
}

/// Same graph with node ids replaced by a seeded random injection and the
/// node and edge lists shuffled.
pub fn permuted(g: &ComputationGraph, seed: u64) -> ComputationGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<NodeId> = (0..g.nodes.len() as u64 * 3).collect();
    ids.shuffle(&mut rng);
    let map: std::collections::HashMap<NodeId, NodeId> =
        g.nodes.iter().zip(&ids).map(|(n, &new)| (n.id, new + 1000)).collect();
    let mut out = g.relabel(|id| map[&id]);
    out.nodes.shuffle(&mut rng);
    out.edges.shuffle(&mut rng);
    out
}

/// Random sequential CNN together with FLOPs and params counted by
/// stepping through every MAC and weight element.
pub fn sequential_net(seed: u64) -> (ComputationGraph, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut c, mut h, mut w) = (rng.gen_range(1..4usize), rng.gen_range(6..20usize), rng.gen_range(6..20usize));
    let mut g = ComputationGraph::new([c, h, w]);
    let (mut flops, mut params) = (0u64, 0u64);
    let mut prev: Option<u64> = None;
    let mut flat: Option<usize> = None;
    for id in 0..rng.gen_range(1..8u64) {
        let node = if let Some(features_in) = flat {
            let out = rng.gen_range(1..20usize);
            for _ in 0..features_in * out {
                flops += 2;
                params += 1;
            }
            params += out as u64;
            flat = Some(out);
            OperatorNode::new(id, OpKind::Linear)
                .with_attr("features_in", features_in as i64)
                .with_attr("features_out", out as i64)
        } else {
            match rng.gen_range(0..6) {
                0 | 1 => {
                    let k = rng.gen_range(1..4usize).min(h).min(w);
                    let s = rng.gen_range(1..3usize);
                    let out = rng.gen_range(1..9usize);
                    let (ho, wo) = ((h - k) / s + 1, (w - k) / s + 1);
                    for _ in 0..out * ho * wo {
                        for _ in 0..c * k * k {
                            flops += 2;
                        }
                    }
                    for _ in 0..out * c * k * k + out {
                        params += 1;
                    }
                    let node = conv(id, c as i64, out as i64, k as i64, s as i64, 0);
                    (c, h, w) = (out, ho, wo);
                    node
                }
                2 => {
                    for _ in 0..c * h * w {
                        flops += 4;
                    }
                    params += 2 * c as u64;
                    OperatorNode::new(id, OpKind::BatchNorm2D).with_attr("num_features", c as i64)
                }
                3 => {
                    flops += (c * h * w) as u64;
                    OperatorNode::new(id, OpKind::ReLU)
                }
                4 if h >= 2 && w >= 2 => {
                    (h, w) = (h / 2, w / 2);
                    for _ in 0..c * h * w {
                        flops += 4;
                    }
                    pool(id, OpKind::MaxPool2D, 2, 2, 0)
                }
                _ => {
                    flat = Some(c * h * w);
                    OperatorNode::new(id, OpKind::Flatten)
                }
            }
        };
        g.add_node(node);
        if let Some(p) = prev {
            g.connect(p, id);
        }
        prev = Some(id);
    }
    (g, flops, params)
}

pub const LABELS: [OpKind; 3] = [OpKind::Conv2D, OpKind::ReLU, OpKind::Add];

pub fn labelled_dag(labels: &[OpKind], edges: &[(u64, u64)]) -> ComputationGraph {
    let mut g = ComputationGraph::new([1, 4, 4]);
    for (i, op) in labels.iter().enumerate() {
        g.add_node(OperatorNode::new(i as u64, *op));
    }
    g.edges = edges.to_vec();
    g
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Canonical form: lexicographically smallest (labels, sorted edges) over
/// every relabelling. Equal forms iff the graphs are isomorphic.
pub fn canonical(labels: &[OpKind], edges: &[(u64, u64)], perms: &[Vec<usize>]) -> (Vec<&'static str>, Vec<(usize, usize)>) {
    perms
        .iter()
        .map(|p| {
            let mut l = vec![""; labels.len()];
            for (i, op) in labels.iter().enumerate() {
                l[p[i]] = op.name();
            }
            let mut e: Vec<_> = edges.iter().map(|&(a, b)| (p[a as usize], p[b as usize])).collect();
            e.sort();
            (l, e)
        })
        .min()
        .unwrap()
}
