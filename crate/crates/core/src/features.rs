//! Structure-independent features and feature-vector assembly.
//!
//! A feature vector is the nine run/model descriptors (batch size, input
//! size, channels, learning rate, epochs, optimizer, layers, FLOPs, params)
//! followed by a structural segment: either a flattened structural matrix or a
//! graph embedding. Input size occupies two slots (height, width), so the
//! fixed prefix is [`BASE_COLUMNS`]`.len()` = 10 values wide.
//!
//! Conventions recorded in every layout:
//! * FLOPs are forward, per sample, with one multiply-add counted as 2.
//! * The optimizer is a category index (see [`Optimizer::index`]), not one-hot.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationGraph, GraphError, OpKind};
use crate::hash::fnv1a64_str;
use crate::nsm::Nsm;

pub const FLOPS_CONVENTION: &str = "forward,per-sample,mac=2";
pub const OPTIMIZER_ENCODING: &str = "index:SGD=0,Adam=1,RMSProp=2,Adagrad=3,Other=4";
pub const LAYER_RULE: &str = "all nodes except attribute-less Other";

pub const BASE_COLUMNS: [&str; 10] = [
    "batch_size",
    "input_h",
    "input_w",
    "channels",
    "learning_rate",
    "epochs",
    "optimizer",
    "layers",
    "flops",
    "params",
];

/// Offsets into the fixed prefix of a feature vector.
pub mod slot {
    pub const BATCH_SIZE: usize = 0;
    pub const INPUT_H: usize = 1;
    pub const INPUT_W: usize = 2;
    pub const CHANNELS: usize = 3;
    pub const LEARNING_RATE: usize = 4;
    pub const EPOCHS: usize = 5;
    pub const OPTIMIZER: usize = 6;
    pub const LAYERS: usize = 7;
    pub const FLOPS: usize = 8;
    pub const PARAMS: usize = 9;
}

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid run config: {0}")]
    InvalidConfig(String),
    #[error("structural segment contains a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Optimizer {
    #[serde(rename = "SGD")]
    Sgd,
    Adam,
    #[serde(rename = "RMSProp")]
    RmsProp,
    Adagrad,
    Other,
}

impl Optimizer {
    pub const ALL: [Optimizer; 5] = [
        Optimizer::Sgd,
        Optimizer::Adam,
        Optimizer::RmsProp,
        Optimizer::Adagrad,
        Optimizer::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Sgd => "SGD",
            Optimizer::Adam => "Adam",
            Optimizer::RmsProp => "RMSProp",
            Optimizer::Adagrad => "Adagrad",
            Optimizer::Other => "Other",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Optimizer {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Optimizer::ALL
            .into_iter()
            .find(|o| o.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FeatureError::InvalidConfig(format!("unknown optimizer `{s}`")))
    }
}

/// Training-run configuration for one (graph, config) data point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub batch_size: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub channels: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
}

impl RunConfig {
    /// Config matching the graph's own input shape, with the profiling
    /// defaults (learning rate 0.1, one epoch, SGD).
    pub fn for_graph(g: &ComputationGraph, batch_size: usize) -> Self {
        let [c, h, w] = g.input_shape;
        RunConfig {
            batch_size,
            input_h: h,
            input_w: w,
            channels: c,
            learning_rate: 0.1,
            epochs: 1,
            optimizer: Optimizer::Sgd,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let positive = [
            ("batch_size", self.batch_size),
            ("input_h", self.input_h),
            ("input_w", self.input_w),
            ("channels", self.channels),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(FeatureError::InvalidConfig(format!("{name} must be positive")));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(FeatureError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.input_h, self.input_w]
    }
}

pub fn count_params(g: &ComputationGraph) -> Result<u64, GraphError> {
    g.nodes.iter().map(|n| n.param_count()).sum()
}

/// Forward FLOPs for one sample. Needs inferred shapes; the batch dimension of
/// the stored shapes is ignored.
pub fn count_flops(g: &ComputationGraph) -> Result<u64, GraphError> {
    let mut total = 0u64;
    for node in &g.nodes {
        let shape = node.output_shape.as_ref().ok_or_else(|| GraphError::Shape {
            node: Some(node.id),
            message: "output shape missing; run infer_shapes first".into(),
        })?;
        let out = shape.per_sample_elements();
        let a = |name: &str| node.dim_attr(name).map(|v| v as u64);
        total += match node.op {
            OpKind::Conv2D => {
                // out already includes out_channels * H_out * W_out
                2 * a("kernel_h")? * a("kernel_w")? * a("in_channels")? * out
            }
            OpKind::Linear => 2 * a("features_in")? * a("features_out")?,
            OpKind::BatchNorm2D => 4 * out,
            OpKind::ReLU | OpKind::Add => out,
            OpKind::MaxPool2D | OpKind::AvgPool2D => a("kernel_h")? * a("kernel_w")? * out,
            _ => 0,
        };
    }
    Ok(total)
}

pub fn count_layers(g: &ComputationGraph) -> usize {
    g.nodes
        .iter()
        .filter(|n| !(n.op == OpKind::Other && n.attrs.is_empty()))
        .count()
}

/// Structural half of a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Structural {
    Nsm { names: Vec<String>, counts: Vec<u64> },
    Embedding(Vec<f64>),
}

impl Structural {
    pub fn from_nsm(m: &Nsm) -> Self {
        Structural::Nsm {
            names: m.flat_names(),
            counts: m.flatten(),
        }
    }

    pub fn from_embedding(v: Vec<f64>) -> Self {
        Structural::Embedding(v)
    }

    pub fn len(&self) -> usize {
        match self {
            Structural::Nsm { counts, .. } => counts.len(),
            Structural::Embedding(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn column_names(&self) -> Vec<String> {
        match self {
            Structural::Nsm { names, .. } => names.iter().map(|n| format!("nsm:{n}")).collect(),
            Structural::Embedding(v) => (0..v.len()).map(|i| format!("emb:{i}")).collect(),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Structural::Nsm { counts, .. } => counts.iter().map(|&c| c as f64).collect(),
            Structural::Embedding(v) => v.clone(),
        }
    }
}

/// Column names of a feature vector plus the conventions used to compute
/// them. Two layouts are interchangeable iff their hashes match.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    columns: Vec<String>,
}

impl FeatureLayout {
    /// Layout from full column names, e.g. a dataset header.
    pub fn from_columns(columns: Vec<String>) -> Self {
        FeatureLayout { columns }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn structural_len(&self) -> usize {
        self.columns.len().saturating_sub(BASE_COLUMNS.len())
    }

    /// Stable hash over the conventions and column names.
    pub fn hash(&self) -> u64 {
        fnv1a64_str(&self.describe())
    }

    pub fn describe(&self) -> String {
        let mut s = format!(
            "flops={FLOPS_CONVENTION}\noptimizer={OPTIMIZER_ENCODING}\nlayers={LAYER_RULE}\n"
        );
        for c in &self.columns {
            s.push_str(c);
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: FeatureLayout,
}

impl FeatureVector {
    pub fn structural(&self) -> &[f64] {
        &self.values[BASE_COLUMNS.len()..]
    }
}

/// Assembles the feature vector for one run. Shapes are inferred with the
/// config's input shape (channels, h, w), which replaces the graph's own.
pub fn extract_features(
    g: &ComputationGraph,
    cfg: &RunConfig,
    structural: &Structural,
) -> Result<FeatureVector, FeatureError> {
    cfg.validate()?;
    if let Structural::Embedding(v) = structural {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FeatureError::NonFinite);
        }
    }
    let mut graph = g.clone();
    graph.input_shape = cfg.input_shape();
    let shaped = graph.infer_shapes(1)?;

    let mut values = vec![
        cfg.batch_size as f64,
        cfg.input_h as f64,
        cfg.input_w as f64,
        cfg.channels as f64,
        cfg.learning_rate,
        cfg.epochs as f64,
        cfg.optimizer.index() as f64,
        count_layers(&shaped) as f64,
        count_flops(&shaped)? as f64,
        count_params(&shaped)? as f64,
    ];
    values.extend(structural.values());

    let mut columns: Vec<String> = BASE_COLUMNS.iter().map(|c| c.to_string()).collect();
    columns.extend(structural.column_names());
    Ok(FeatureVector {
        values,
        layout: FeatureLayout { columns },
    })
}
