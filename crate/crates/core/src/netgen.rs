//! Random computation graphs and a closed-form synthetic cost oracle.
//!
//! Graphs are built forward with the running (C, H, W) shape tracked, so
//! every output validates and infers shapes by construction. Branch blocks
//! merge through `Add` (a 1x1 `Conv2D` adapter on the skip path reconciles
//! channels) or `Concat`.
//!
//! Oracle, for a graph with inferred shapes and run config `cfg`:
//!
//! ```text
//! time_s  = epochs * (flops * batch * coef(batch) + layers * layer_overhead_s)
//! mem_mib = ceil_step( bpe * params * (2 + optimizer_slots)
//!                    + bpe * batch * (input + 2 * sum(per-sample outputs))
//!                    + spike_mib * 2^20 * #{Conv2D : in_ch * out_ch > spike_threshold} )
//! ```
//!
//! `flops` is the per-sample forward count from [`count_flops`], `coef` is
//! piecewise constant in the batch size, and `ceil_step` rounds bytes up to a
//! whole number of `alloc_step_mib` blocks. Optimizer slots: Adam 2, every
//! other optimizer 1.

use std::fmt;
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{train_embeddings, wl_tokens, EmbeddingError, EmbeddingModel, EmbeddingParams};
use crate::features::{
    count_flops, count_layers, count_params, extract_features, FeatureError, Optimizer, RunConfig,
    Structural,
};
use crate::graph::{ComputationGraph, GraphError, NodeId, OpKind, OperatorNode};
use crate::hash::mix;
use crate::nsm::{build_nsm, OperatorVocabulary};
use crate::predictor::{Dataset, PredictorError, Provenance};

const MIB: f64 = 1024.0 * 1024.0;
const MAX_ATTEMPTS: u64 = 16;

#[derive(Debug, Error)]
pub enum NetgenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("no valid graph after {attempts} attempts: {last}")]
    Generation { attempts: u64, last: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Topology family. `Mixed` picks `Add` or `Concat` per block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Chain,
    Residual,
    Inception,
    Mixed,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Chain, Family::Residual, Family::Inception, Family::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Family::Chain => "chain",
            Family::Residual => "residual",
            Family::Inception => "inception",
            Family::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = NetgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| NetgenError::InvalidSpec(format!("unknown family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub nodes: RangeInclusive<usize>,
    pub branch_prob: f64,
    pub channels: RangeInclusive<usize>,
    pub kernels: Vec<usize>,
    pub input_shape: [usize; 3],
    pub family: Family,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            nodes: 5..=60,
            branch_prob: 0.3,
            channels: 8..=256,
            kernels: vec![1, 3, 5, 7],
            input_shape: [3, 32, 32],
            family: Family::Mixed,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<(), NetgenError> {
        let bad = |m: String| Err(NetgenError::InvalidSpec(m));
        if self.nodes.is_empty() || *self.nodes.start() == 0 {
            return bad(format!("node range {:?} must be non-empty and start at 1 or more", self.nodes));
        }
        if self.channels.is_empty() || *self.channels.start() == 0 {
            return bad(format!("channel range {:?} must be non-empty and positive", self.channels));
        }
        if !(0.0..=1.0).contains(&self.branch_prob) {
            return bad(format!("branch probability {} outside [0, 1]", self.branch_prob));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad("kernel choices must be non-empty odd sizes".into());
        }
        if self.input_shape.contains(&0) {
            return bad("input shape must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Feat {
    id: NodeId,
    c: usize,
    h: usize,
    w: usize,
}

struct Builder<'a> {
    spec: &'a GenSpec,
    rng: ChaCha8Rng,
    g: ComputationGraph,
}

impl Builder<'_> {
    fn push(&mut self, node: OperatorNode, inputs: &[NodeId]) -> NodeId {
        let id = self.g.next_id();
        let node = OperatorNode { id, ..node };
        self.g.add_node(node);
        for &i in inputs {
            self.g.connect(i, id);
        }
        id
    }

    fn channels(&mut self) -> usize {
        self.rng.gen_range(self.spec.channels.clone())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(&mut self, x: Option<Feat>, in_c: usize, h: usize, w: usize, out_c: usize, k: usize, stride: usize) -> Feat {
        let p = k / 2;
        let node = OperatorNode::new(0, OpKind::Conv2D)
            .with_attr("kernel_h", k as i64)
            .with_attr("kernel_w", k as i64)
            .with_attr("stride", stride as i64)
            .with_attr("padding", p as i64)
            .with_attr("in_channels", in_c as i64)
            .with_attr("out_channels", out_c as i64);
        let inputs: Vec<NodeId> = x.iter().map(|f| f.id).collect();
        let id = self.push(node, &inputs);
        Feat {
            id,
            c: out_c,
            h: (h + 2 * p - k) / stride + 1,
            w: (w + 2 * p - k) / stride + 1,
        }
    }

    /// Width after a conv on `c` channels: mostly kept, sometimes doubled
    /// (always when downsampling), occasionally redrawn.
    fn next_width(&mut self, c: usize, strided: bool) -> usize {
        let (lo, hi) = (*self.spec.channels.start(), *self.spec.channels.end());
        let r: f64 = self.rng.gen();
        if strided || (0.6..0.85).contains(&r) {
            (2 * c).clamp(lo, hi)
        } else if r < 0.6 {
            c.clamp(lo, hi)
        } else {
            self.channels()
        }
    }

    fn random_conv(&mut self, x: Feat, allow_stride: bool) -> Feat {
        let k = *self.spec.kernels.choose(&mut self.rng).unwrap();
        let strided = allow_stride && x.h >= 8 && x.w >= 8 && self.rng.gen_bool(0.2);
        let out = self.next_width(x.c, strided);
        self.conv(Some(x), x.c, x.h, x.w, out, k, if strided { 2 } else { 1 })
    }

    /// One op after `x`. `spatial_ok` allows pooling and strided convs;
    /// `conv_ok` allows channel-changing convs.
    fn single(&mut self, x: Feat, prev: OpKind, spatial_ok: bool, conv_ok: bool) -> (Feat, OpKind) {
        let can_pool = spatial_ok && x.h >= 4 && x.w >= 4;
        let mut choices: Vec<(OpKind, u32)> = vec![(OpKind::ReLU, 2), (OpKind::Dropout, 1)];
        if conv_ok {
            choices.push((OpKind::Conv2D, 4));
        }
        if prev == OpKind::Conv2D {
            choices.push((OpKind::BatchNorm2D, 6));
            choices.push((OpKind::ReLU, 3));
        }
        if can_pool {
            choices.push((OpKind::MaxPool2D, 1));
            choices.push((OpKind::AvgPool2D, 1));
        }
        let op = choices.choose_weighted(&mut self.rng, |c| c.1).unwrap().0;
        let out = match op {
            OpKind::Conv2D => self.random_conv(x, spatial_ok),
            OpKind::BatchNorm2D => {
                let id = self.push(
                    OperatorNode::new(0, op).with_attr("num_features", x.c as i64),
                    &[x.id],
                );
                Feat { id, ..x }
            }
            OpKind::MaxPool2D | OpKind::AvgPool2D => {
                let node = OperatorNode::new(0, op)
                    .with_attr("kernel_h", 2)
                    .with_attr("kernel_w", 2)
                    .with_attr("stride", 2)
                    .with_attr("padding", 0);
                let id = self.push(node, &[x.id]);
                Feat {
                    id,
                    c: x.c,
                    h: (x.h - 2) / 2 + 1,
                    w: (x.w - 2) / 2 + 1,
                }
            }
            _ => {
                let id = self.push(OperatorNode::new(0, op), &[x.id]);
                Feat { id, ..x }
            }
        };
        (out, op)
    }

    /// A spatial-size-preserving path of `len` ops starting at `x`. With
    /// `fixed_c`, the path opens with a conv to that channel count and
    /// contains no other conv.
    fn path(&mut self, x: Feat, len: usize, conv_first: bool, fixed_c: Option<usize>) -> Feat {
        let mut cur = x;
        let mut prev = OpKind::Other;
        for i in 0..len {
            if i == 0 && conv_first {
                cur = match fixed_c {
                    Some(c) => {
                        let k = *self.spec.kernels.choose(&mut self.rng).unwrap();
                        self.conv(Some(cur), cur.c, cur.h, cur.w, c, k, 1)
                    }
                    None => self.random_conv(cur, false),
                };
                prev = OpKind::Conv2D;
            } else {
                (cur, prev) = self.single(cur, prev, false, fixed_c.is_none());
            }
        }
        cur
    }

    /// Two-path block of exactly `size` nodes (>= 2) ending in a merge.
    fn block(&mut self, x: Feat, size: usize, merge: OpKind) -> Feat {
        let a_len = self.rng.gen_range(1..size);
        let skip_len = size - 1 - a_len;
        let (a, skip, c) = if merge == OpKind::Add {
            if skip_len == 0 {
                // identity skip: the main path must land on x's channels
                let a = self.path(x, a_len, true, Some(x.c));
                (a, x, x.c)
            } else {
                let a = self.path(x, a_len, true, None);
                let pre = self.path(x, skip_len - 1, false, Some(x.c));
                let adapter = self.conv(Some(pre), pre.c, pre.h, pre.w, a.c, 1, 1);
                (a, adapter, a.c)
            }
        } else {
            let a = self.path(x, a_len, true, None);
            let skip = self.path(x, skip_len, false, None);
            (a, skip, a.c + skip.c)
        };
        let id = self.push(OperatorNode::new(0, merge), &[a.id, skip.id]);
        Feat { id, c, ..x }
    }
}

fn build(spec: &GenSpec, seed: u64) -> ComputationGraph {
    let mut b = Builder {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
        g: ComputationGraph::new(spec.input_shape),
    };
    let n = b.rng.gen_range(spec.nodes.clone());
    let softmax = n >= 4 && b.rng.gen_bool(0.5);
    let head = if n >= 3 { 2 + usize::from(softmax) } else { 0 };
    let [c0, h0, w0] = spec.input_shape;

    let first_out = b.channels();
    let k = *spec.kernels.choose(&mut b.rng).unwrap();
    let mut cur = b.conv(None, c0, h0, w0, first_out, k, 1);
    let mut prev = OpKind::Conv2D;
    let mut remaining = n - head - 1;
    while remaining > 0 {
        let merge = match spec.family {
            Family::Chain => None,
            Family::Residual => Some(OpKind::Add),
            Family::Inception => Some(OpKind::Concat),
            Family::Mixed => Some(if b.rng.gen_bool(0.5) { OpKind::Add } else { OpKind::Concat }),
        };
        match merge {
            Some(m) if remaining >= 2 && b.rng.gen_bool(spec.branch_prob) => {
                let size = b.rng.gen_range(2..=remaining.min(8));
                cur = b.block(cur, size, m);
                prev = m;
                remaining -= size;
            }
            _ => {
                (cur, prev) = b.single(cur, prev, true, true);
                remaining -= 1;
            }
        }
    }
    if head > 0 {
        let flat = b.push(OperatorNode::new(0, OpKind::Flatten), &[cur.id]);
        let fin = cur.c * cur.h * cur.w;
        let fout = *[10usize, 100, 1000].choose(&mut b.rng).unwrap();
        let lin = b.push(
            OperatorNode::new(0, OpKind::Linear)
                .with_attr("features_in", fin as i64)
                .with_attr("features_out", fout as i64),
            &[flat],
        );
        if softmax {
            b.push(OperatorNode::new(0, OpKind::Softmax), &[lin]);
        }
    }
    b.g
}

/// Deterministic random network for `spec`. Node ids are assigned in
/// creation order, which is also a topological order.
pub fn generate_random_network(spec: &GenSpec) -> Result<ComputationGraph, NetgenError> {
    spec.validate()?;
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let g = build(spec, mix(spec.seed, attempt));
        let report = g.validate();
        if !report.ok {
            last = report.to_string();
            continue;
        }
        if !spec.nodes.contains(&g.nodes.len()) {
            last = format!("{} nodes outside {:?}", g.nodes.len(), spec.nodes);
            continue;
        }
        match g.infer_shapes(1) {
            Ok(_) => return Ok(g),
            Err(e) => last = e.to_string(),
        }
    }
    Err(NetgenError::Generation {
        attempts: MAX_ATTEMPTS,
        last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCostParams {
    /// Upper batch bounds of each regime; batches above the last bound use
    /// the final coefficient.
    pub regime_bounds: Vec<usize>,
    /// Seconds per FLOP, one more entry than `regime_bounds`.
    pub regime_coefficients: Vec<f64>,
    pub layer_overhead_s: f64,
    pub alloc_step_mib: f64,
    /// Conv2D layers with `in_channels * out_channels` above this spike.
    pub spike_threshold: u64,
    pub spike_mib: f64,
    pub bytes_per_element: u64,
}

impl Default for SyntheticCostParams {
    fn default() -> Self {
        SyntheticCostParams {
            regime_bounds: vec![32, 128, 192],
            regime_coefficients: vec![3.0e-11, 2.0e-11, 2.4e-11, 1.6e-11],
            layer_overhead_s: 5e-5,
            alloc_step_mib: 2.0,
            spike_threshold: 32_768,
            spike_mib: 64.0,
            bytes_per_element: 4,
        }
    }
}

impl SyntheticCostParams {
    pub fn validate(&self) -> Result<(), NetgenError> {
        let positive = self.layer_overhead_s > 0.0
            && self.alloc_step_mib > 0.0
            && self.spike_mib > 0.0
            && self.spike_threshold > 0
            && self.bytes_per_element > 0
            && self.regime_coefficients.iter().all(|&c| c > 0.0 && c.is_finite());
        if !positive {
            return Err(NetgenError::InvalidSpec("cost parameters must be positive".into()));
        }
        if self.regime_coefficients.len() != self.regime_bounds.len() + 1 {
            return Err(NetgenError::InvalidSpec(
                "need one more regime coefficient than regime bounds".into(),
            ));
        }
        Ok(())
    }

    pub fn coefficient(&self, batch: usize) -> f64 {
        let i = self.regime_bounds.partition_point(|&b| b < batch);
        self.regime_coefficients[i]
    }

    /// Optimizer state slots per parameter.
    pub fn optimizer_slots(o: Optimizer) -> u64 {
        match o {
            Optimizer::Adam => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cost {
    pub time_s: f64,
    pub mem_mib: f64,
}

/// Closed-form cost of training `g` under `cfg` (see the module docs).
pub fn synthetic_cost(g: &ComputationGraph, cfg: &RunConfig, p: &SyntheticCostParams) -> Result<Cost, NetgenError> {
    cfg.validate()?;
    let mut graph = g.clone();
    graph.input_shape = cfg.input_shape();
    let shaped = graph.infer_shapes(1)?;
    let batch = cfg.batch_size;

    let flops = count_flops(&shaped)? as f64;
    let layers = count_layers(&shaped) as f64;
    let time_s = cfg.epochs as f64 * (flops * batch as f64 * p.coefficient(batch) + layers * p.layer_overhead_s);

    let bpe = p.bytes_per_element as f64;
    let params = count_params(&shaped)? as f64;
    let outputs: u64 = shaped
        .nodes
        .iter()
        .filter_map(|n| n.output_shape.as_ref())
        .map(|s| s.per_sample_elements())
        .sum();
    let spikes = shaped
        .nodes
        .iter()
        .filter(|n| n.op == OpKind::Conv2D)
        .filter(|n| {
            let prod = n.attr("in_channels").unwrap_or(0) * n.attr("out_channels").unwrap_or(0);
            prod > 0 && prod as u64 > p.spike_threshold
        })
        .count() as f64;
    let bytes = bpe * params * (2 + SyntheticCostParams::optimizer_slots(cfg.optimizer)) as f64
        + bpe * batch as f64 * (shaped.input_elements() as f64 + 2.0 * outputs as f64);
    let mem_mib = (bytes / MIB / p.alloc_step_mib).ceil() * p.alloc_step_mib + spikes * p.spike_mib;
    Ok(Cost { time_s, mem_mib })
}

/// Which structural segment the generated dataset carries.
#[derive(Debug, Clone, PartialEq)]
pub enum StructuralMode {
    Nsm,
    Embedding(EmbeddingParams),
}

/// Settings for [`generate_dataset`]. Graph `i` uses family
/// `families[i % families.len()]` and an input shape drawn from
/// `input_shapes`; every other field of `template` applies to all graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub template: GenSpec,
    pub families: Vec<Family>,
    pub input_shapes: Vec<[usize; 3]>,
    pub graphs: usize,
    pub configs_per_graph: usize,
    pub batch: RangeInclusive<usize>,
    pub epochs: RangeInclusive<usize>,
    pub learning_rates: Vec<f64>,
    pub structural: StructuralMode,
    pub cost: SyntheticCostParams,
    pub machine_id: String,
    pub framework_id: String,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            template: GenSpec::default(),
            families: Family::ALL.to_vec(),
            input_shapes: vec![[3, 32, 32], [1, 28, 28], [3, 64, 64]],
            graphs: 100,
            configs_per_graph: 1,
            batch: 1..=256,
            epochs: 1..=3,
            learning_rates: vec![0.1, 0.01, 0.001],
            structural: StructuralMode::Nsm,
            cost: SyntheticCostParams::default(),
            machine_id: "synthetic".into(),
            framework_id: "oracle".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedGraph {
    pub id: String,
    pub family: Family,
    pub graph: ComputationGraph,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub graphs: Vec<GeneratedGraph>,
    pub dataset: Dataset,
    /// Present in embedding mode.
    pub embedding: Option<EmbeddingModel>,
}

impl GeneratedDataset {
    pub fn family_of(&self, graph_id: &str) -> Option<Family> {
        self.graphs.iter().find(|g| g.id == graph_id).map(|g| g.family)
    }
}

/// Generates graphs, random run configs and oracle costs. Deterministic in
/// `spec.seed` regardless of thread count.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<GeneratedDataset, NetgenError> {
    spec.template.validate()?;
    spec.cost.validate()?;
    if spec.families.is_empty() || spec.input_shapes.is_empty() || spec.learning_rates.is_empty() {
        return Err(NetgenError::InvalidSpec("families, input shapes and learning rates must be non-empty".into()));
    }
    if spec.batch.is_empty() || *spec.batch.start() == 0 || spec.epochs.is_empty() || *spec.epochs.start() == 0 {
        return Err(NetgenError::InvalidSpec("batch and epoch ranges must be positive".into()));
    }

    let graphs: Vec<GeneratedGraph> = (0..spec.graphs)
        .into_par_iter()
        .map(|i| {
            let family = spec.families[i % spec.families.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 2 * i as u64));
            let gen = GenSpec {
                family,
                input_shape: *spec.input_shapes.choose(&mut rng).unwrap(),
                seed: rng.gen(),
                ..spec.template.clone()
            };
            Ok(GeneratedGraph {
                id: format!("{family}-{i:05}"),
                family,
                graph: generate_random_network(&gen)?,
            })
        })
        .collect::<Result<_, NetgenError>>()?;

    let (structurals, embedding) = match &spec.structural {
        StructuralMode::Nsm => {
            let vocab = OperatorVocabulary::default();
            let s = graphs
                .iter()
                .map(|g| Ok(Structural::from_nsm(&build_nsm(&g.graph, &vocab)?)))
                .collect::<Result<Vec<_>, GraphError>>()?;
            (s, None)
        }
        StructuralMode::Embedding(params) => {
            let corpus: Vec<_> = graphs
                .iter()
                .map(|g| wl_tokens(&g.graph, params.depth).with_id(g.id.clone()))
                .collect();
            let model = train_embeddings(&corpus, params)?;
            let s = model
                .graph_vectors
                .iter()
                .map(|v| Structural::from_embedding(v.clone()))
                .collect();
            (s, Some(model))
        }
    };

    let rows: Vec<Vec<(crate::features::FeatureVector, Cost, Provenance)>> = graphs
        .par_iter()
        .zip(&structurals)
        .enumerate()
        .map(|(i, (gg, structural))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, 2 * i as u64 + 1));
            (0..spec.configs_per_graph)
                .map(|_| {
                    let mut cfg = RunConfig::for_graph(&gg.graph, rng.gen_range(spec.batch.clone()));
                    cfg.epochs = rng.gen_range(spec.epochs.clone());
                    cfg.learning_rate = *spec.learning_rates.choose(&mut rng).unwrap();
                    cfg.optimizer = *Optimizer::ALL.choose(&mut rng).unwrap();
                    let fv = extract_features(&gg.graph, &cfg, structural)?;
                    let cost = synthetic_cost(&gg.graph, &cfg, &spec.cost)?;
                    let prov = Provenance {
                        graph_id: gg.id.clone(),
                        machine_id: spec.machine_id.clone(),
                        framework_id: spec.framework_id.clone(),
                    };
                    Ok((fv, cost, prov))
                })
                .collect()
        })
        .collect::<Result<_, NetgenError>>()?;

    let mut dataset: Option<Dataset> = None;
    for (fv, cost, prov) in rows.into_iter().flatten() {
        let ds = dataset.get_or_insert_with(|| Dataset::new(fv.layout.clone()));
        ds.push(&fv, cost.time_s, cost.mem_mib, prov)?;
    }
    let dataset = dataset.unwrap_or_else(|| Dataset::new(crate::features::FeatureLayout::from_columns(vec![])));
    Ok(GeneratedDataset {
        graphs,
        dataset,
        embedding,
    })
}
