//! Computation-graph data model.
//!
//! A network is a DAG of operator calls. Edges carry the output tensor of the
//! source node into the sink node. Nodes with no incoming edge consume the model
//! input. Shapes are not stored in the graph file: they are derived by
//! [`ComputationGraph::infer_shapes`] for a runtime batch size.
//!
//! # Example
//!
//! ```
//! use abacus::graph::{ComputationGraph, OpKind, OperatorNode};
//!
//! let mut g = ComputationGraph::new([3, 32, 32]);
//! let conv = g.add_node(
//!     OperatorNode::new(0, OpKind::Conv2D)
//!         .with_attr("kernel_h", 3)
//!         .with_attr("kernel_w", 3)
//!         .with_attr("stride", 1)
//!         .with_attr("padding", 1)
//!         .with_attr("in_channels", 3)
//!         .with_attr("out_channels", 16),
//! );
//! let relu = g.add_node(OperatorNode::new(1, OpKind::ReLU));
//! g.connect(conv, relu);
//!
//! assert!(g.validate().ok);
//! let shaped = g.infer_shapes(1).unwrap();
//! assert_eq!(shaped.node(relu).unwrap().output_shape.as_ref().unwrap().dims(), &[1, 16, 32, 32]);
//! ```

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default element width for memory estimates (single precision).
pub const DEFAULT_BYTES_PER_ELEMENT: u64 = 4;

pub type NodeId = u64;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph file: {0}")]
    Parse(String),
    #[error("graph contains a cycle through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("edge references unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {node}: missing or invalid attribute `{attr}`")]
    MissingAttr { node: NodeId, attr: String },
    #[error("shape error{}: {message}", node.map(|n| format!(" at node {n}")).unwrap_or_default())]
    Shape {
        node: Option<NodeId>,
        message: String,
    },
    #[error("graph failed validation: {0}")]
    Invalid(ValidationReport),
}

impl GraphError {
    fn shape(node: NodeId, message: impl Into<String>) -> Self {
        GraphError::Shape {
            node: Some(node),
            message: message.into(),
        }
    }
}

/// Closed operator vocabulary. Unrecognised operator names load as `Other`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Conv2D,
    Linear,
    BatchNorm2D,
    ReLU,
    MaxPool2D,
    AvgPool2D,
    Add,
    Concat,
    Flatten,
    Dropout,
    Softmax,
    Other,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2D,
        OpKind::Linear,
        OpKind::BatchNorm2D,
        OpKind::ReLU,
        OpKind::MaxPool2D,
        OpKind::AvgPool2D,
        OpKind::Add,
        OpKind::Concat,
        OpKind::Flatten,
        OpKind::Dropout,
        OpKind::Softmax,
        OpKind::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::Linear => "Linear",
            OpKind::BatchNorm2D => "BatchNorm2D",
            OpKind::ReLU => "ReLU",
            OpKind::MaxPool2D => "MaxPool2D",
            OpKind::AvgPool2D => "AvgPool2D",
            OpKind::Add => "Add",
            OpKind::Concat => "Concat",
            OpKind::Flatten => "Flatten",
            OpKind::Dropout => "Dropout",
            OpKind::Softmax => "Softmax",
            OpKind::Other => "Other",
        }
    }

    /// Maps an operator name onto the vocabulary, logging a warning when the
    /// name is not recognised.
    pub fn from_name_lossy(name: &str) -> OpKind {
        name.parse().unwrap_or_else(|_| {
            log::warn!("unknown operator `{name}` mapped to Other");
            OpKind::Other
        })
    }

    /// Attributes that must be present. `padding` may be zero, everything
    /// else must be strictly positive.
    pub fn required_attrs(self) -> &'static [&'static str] {
        match self {
            OpKind::Conv2D => &[
                "kernel_h",
                "kernel_w",
                "stride",
                "padding",
                "in_channels",
                "out_channels",
            ],
            OpKind::Linear => &["features_in", "features_out"],
            OpKind::BatchNorm2D => &["num_features"],
            OpKind::MaxPool2D | OpKind::AvgPool2D => &["kernel_h", "kernel_w", "stride", "padding"],
            _ => &[],
        }
    }

    fn accepts_many_inputs(self) -> bool {
        matches!(self, OpKind::Add | OpKind::Concat | OpKind::Other)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownOp(pub String);

impl FromStr for OpKind {
    type Err = UnknownOp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| UnknownOp(s.to_string()))
    }
}

/// Tensor shape including the leading batch dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: Vec<usize>) -> Self {
        Shape(dims)
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn elements(&self) -> u64 {
        self.0.iter().map(|&d| d as u64).product()
    }

    /// Element count excluding the batch dimension.
    pub fn per_sample_elements(&self) -> u64 {
        self.0.iter().skip(1).map(|&d| d as u64).product()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub op: OpKind,
    pub attrs: BTreeMap<String, i64>,
    /// Filled by shape inference.
    pub output_shape: Option<Shape>,
}

impl OperatorNode {
    pub fn new(id: NodeId, op: OpKind) -> Self {
        OperatorNode {
            id,
            op,
            attrs: BTreeMap::new(),
            output_shape: None,
        }
    }

    pub fn with_attr(mut self, name: &str, value: i64) -> Self {
        self.attrs.insert(name.to_string(), value);
        self
    }

    pub fn attr(&self, name: &str) -> Option<i64> {
        self.attrs.get(name).copied()
    }

    /// Reads a required attribute as an unsigned value. Zero is accepted only
    /// for `padding`.
    pub fn dim_attr(&self, name: &str) -> Result<usize, GraphError> {
        let min = if name == "padding" { 0 } else { 1 };
        match self.attr(name) {
            Some(v) if v >= min => Ok(v as usize),
            _ => Err(GraphError::MissingAttr {
                node: self.id,
                attr: name.to_string(),
            }),
        }
    }

    /// Number of trainable scalars held by this operator.
    pub fn param_count(&self) -> Result<u64, GraphError> {
        let a = |name: &str| self.dim_attr(name).map(|v| v as u64);
        Ok(match self.op {
            OpKind::Conv2D => {
                let out = a("out_channels")?;
                out * a("in_channels")? * a("kernel_h")? * a("kernel_w")? + out
            }
            OpKind::Linear => {
                let out = a("features_out")?;
                out * a("features_in")? + out
            }
            OpKind::BatchNorm2D => 2 * a("num_features")?,
            _ => 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueLocation {
    Node(NodeId),
    Edge(usize),
}

impl fmt::Display for IssueLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IssueLocation::Node(id) => write!(f, "node {id}"),
            IssueLocation::Edge(i) => write!(f, "edge #{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub location: IssueLocation,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    fn from_issues(issues: Vec<Issue>) -> Self {
        ValidationReport {
            ok: issues.is_empty(),
            issues,
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("OK");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", issue.location, issue.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComputationGraph {
    /// Sample input as (channels, height, width).
    pub input_shape: [usize; 3],
    pub nodes: Vec<OperatorNode>,
    pub edges: Vec<(NodeId, NodeId)>,
}

impl ComputationGraph {
    pub fn new(input_shape: [usize; 3]) -> Self {
        ComputationGraph {
            input_shape,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn add_node(&mut self, node: OperatorNode) -> NodeId {
        let id = node.id;
        self.nodes.push(node);
        id
    }

    pub fn connect(&mut self, src: NodeId, dst: NodeId) {
        self.edges.push((src, dst));
    }

    /// Smallest id not used by any node.
    pub fn next_id(&self) -> NodeId {
        self.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0)
    }

    pub fn node(&self, id: NodeId) -> Option<&OperatorNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Batch-1 input tensor shape.
    pub fn input_elements(&self) -> u64 {
        self.input_shape.iter().map(|&d| d as u64).product()
    }

    /// Returns a copy with every node id passed through `f`. `f` must be
    /// injective.
    pub fn relabel(&self, f: impl Fn(NodeId) -> NodeId) -> ComputationGraph {
        ComputationGraph {
            input_shape: self.input_shape,
            nodes: self
                .nodes
                .iter()
                .map(|n| OperatorNode {
                    id: f(n.id),
                    ..n.clone()
                })
                .collect(),
            edges: self.edges.iter().map(|&(a, b)| (f(a), f(b))).collect(),
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let mut issues = Vec::new();

        let mut seen = HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id) {
                issues.push(Issue {
                    location: IssueLocation::Node(node.id),
                    message: "duplicate node id".into(),
                });
            }
            for attr in node.op.required_attrs() {
                if node.dim_attr(attr).is_err() {
                    let message = match node.attr(attr) {
                        None => format!("{} node is missing required attribute `{attr}`", node.op),
                        Some(v) => format!("{} node has invalid `{attr}` = {v}", node.op),
                    };
                    issues.push(Issue {
                        location: IssueLocation::Node(node.id),
                        message,
                    });
                }
            }
        }
        for (i, &(src, dst)) in self.edges.iter().enumerate() {
            for end in [src, dst] {
                if !seen.contains(&end) {
                    issues.push(Issue {
                        location: IssueLocation::Edge(i),
                        message: format!("dangling edge: node {end} does not exist"),
                    });
                }
            }
        }

        let (_, stuck) = self.kahn();
        if let Some(&first) = stuck.first() {
            issues.push(Issue {
                location: IssueLocation::Node(first),
                message: format!("cycle detected among nodes {stuck:?}"),
            });
        }
        ValidationReport::from_issues(issues)
    }

    /// Kahn's algorithm with ascending-id tie-breaking. Edges touching unknown
    /// nodes are ignored. Returns the order and the ids left on cycles.
    fn kahn(&self) -> (Vec<NodeId>, Vec<NodeId>) {
        let mut indegree: HashMap<NodeId, usize> = self.nodes.iter().map(|n| (n.id, 0)).collect();
        let mut succ: HashMap<NodeId, Vec<NodeId>> = HashMap::new();
        for &(src, dst) in &self.edges {
            if indegree.contains_key(&src) && indegree.contains_key(&dst) {
                *indegree.get_mut(&dst).unwrap() += 1;
                succ.entry(src).or_default().push(dst);
            }
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| Reverse(id))
            .collect();
        let mut order = Vec::with_capacity(indegree.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for &next in succ.get(&id).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(&next).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(Reverse(next));
                }
            }
        }
        let mut stuck: Vec<NodeId> = indegree
            .into_iter()
            .filter(|(_, d)| *d > 0)
            .map(|(id, _)| id)
            .collect();
        stuck.sort_unstable();
        (order, stuck)
    }

    /// Topological order, ties broken by ascending node id.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let ids: HashSet<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        if let Some(&(src, dst)) = self
            .edges
            .iter()
            .find(|(s, d)| !ids.contains(s) || !ids.contains(d))
        {
            return Err(GraphError::UnknownNode(if ids.contains(&src) { dst } else { src }));
        }
        let (order, stuck) = self.kahn();
        if stuck.is_empty() {
            Ok(order)
        } else {
            Err(GraphError::Cycle(stuck))
        }
    }

    /// Predecessors of every node, each list sorted by id.
    pub fn predecessors(&self) -> HashMap<NodeId, Vec<NodeId>> {
        let mut preds: HashMap<NodeId, Vec<NodeId>> =
            self.nodes.iter().map(|n| (n.id, Vec::new())).collect();
        for &(src, dst) in &self.edges {
            if let Some(p) = preds.get_mut(&dst) {
                p.push(src);
            }
        }
        for p in preds.values_mut() {
            p.sort_unstable();
        }
        preds
    }

    /// Returns a copy with every node's `output_shape` filled for the given
    /// batch size.
    pub fn infer_shapes(&self, batch: usize) -> Result<ComputationGraph, GraphError> {
        if batch == 0 {
            return Err(GraphError::Shape {
                node: None,
                message: "batch size must be positive".into(),
            });
        }
        if self.input_shape.contains(&0) {
            return Err(GraphError::Shape {
                node: None,
                message: format!("input shape {:?} has a zero dimension", self.input_shape),
            });
        }
        let order = self.topological_order()?;
        let preds = self.predecessors();
        let index: HashMap<NodeId, usize> =
            self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let [c, h, w] = self.input_shape;
        let model_input = Shape(vec![batch, c, h, w]);

        let mut shapes: HashMap<NodeId, Shape> = HashMap::with_capacity(self.nodes.len());
        for id in order {
            let node = &self.nodes[index[&id]];
            let inputs: Vec<&Shape> = match preds[&id].as_slice() {
                [] => vec![&model_input],
                ps => ps.iter().map(|p| &shapes[p]).collect(),
            };
            let out = node_output_shape(node, &inputs)?;
            shapes.insert(id, out);
        }

        let mut out = self.clone();
        for node in &mut out.nodes {
            node.output_shape = shapes.remove(&node.id);
        }
        Ok(out)
    }

    /// Shape-inference memory estimate: weights plus every output tensor plus
    /// the model input, at `bytes_per_element` each. Requires inferred shapes;
    /// activation terms are rescaled to `batch`.
    pub fn estimate_memory_shape_inference(
        &self,
        batch: usize,
        bytes_per_element: u64,
    ) -> Result<u64, GraphError> {
        let mut weights = 0u64;
        let mut activations = self.input_elements();
        for node in &self.nodes {
            let shape = node.output_shape.as_ref().ok_or_else(|| {
                GraphError::shape(node.id, "output shape missing; run infer_shapes first")
            })?;
            weights += node.param_count()?;
            activations += shape.per_sample_elements();
        }
        Ok(bytes_per_element * (weights + batch as u64 * activations))
    }
}

fn conv_out(node: &OperatorNode, len: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize, GraphError> {
    let padded = len + 2 * pad;
    if padded < kernel {
        return Err(GraphError::shape(
            node.id,
            format!("kernel {kernel} larger than padded input {padded}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

fn node_output_shape(node: &OperatorNode, inputs: &[&Shape]) -> Result<Shape, GraphError> {
    if inputs.len() > 1 && !node.op.accepts_many_inputs() {
        return Err(GraphError::shape(
            node.id,
            format!("{} expects one input, got {}", node.op, inputs.len()),
        ));
    }
    let first = inputs[0];
    let spatial = |what: &str| -> Result<(usize, usize, usize, usize), GraphError> {
        match *first.dims() {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(GraphError::shape(
                node.id,
                format!("{what} needs a 4-d input, got {first}"),
            )),
        }
    };
    match node.op {
        OpKind::Conv2D => {
            let (b, c, h, w) = spatial("Conv2D")?;
            let in_ch = node.dim_attr("in_channels")?;
            if in_ch != c {
                return Err(GraphError::shape(
                    node.id,
                    format!("in_channels = {in_ch} but input has {c} channels"),
                ));
            }
            let (kh, kw) = (node.dim_attr("kernel_h")?, node.dim_attr("kernel_w")?);
            let (s, p) = (node.dim_attr("stride")?, node.dim_attr("padding")?);
            let ho = conv_out(node, h, kh, s, p)?;
            let wo = conv_out(node, w, kw, s, p)?;
            Ok(Shape(vec![b, node.dim_attr("out_channels")?, ho, wo]))
        }
        OpKind::MaxPool2D | OpKind::AvgPool2D => {
            let (b, c, h, w) = spatial(node.op.name())?;
            let (kh, kw) = (node.dim_attr("kernel_h")?, node.dim_attr("kernel_w")?);
            let (s, p) = (node.dim_attr("stride")?, node.dim_attr("padding")?);
            Ok(Shape(vec![b, c, conv_out(node, h, kh, s, p)?, conv_out(node, w, kw, s, p)?]))
        }
        OpKind::BatchNorm2D => {
            let (_, c, _, _) = spatial("BatchNorm2D")?;
            let nf = node.dim_attr("num_features")?;
            if nf != c {
                return Err(GraphError::shape(
                    node.id,
                    format!("num_features = {nf} but input has {c} channels"),
                ));
            }
            Ok(first.clone())
        }
        OpKind::Linear => {
            let fin = node.dim_attr("features_in")?;
            match *first.dims() {
                [b, f] if f == fin => Ok(Shape(vec![b, node.dim_attr("features_out")?])),
                _ => Err(GraphError::shape(
                    node.id,
                    format!("Linear expects (batch, {fin}), got {first}"),
                )),
            }
        }
        OpKind::Flatten => {
            if first.rank() < 2 {
                return Err(GraphError::shape(node.id, format!("cannot flatten {first}")));
            }
            Ok(Shape(vec![first.dims()[0], first.per_sample_elements() as usize]))
        }
        OpKind::Add | OpKind::Other => {
            if let Some(bad) = inputs.iter().find(|s| **s != first) {
                return Err(GraphError::shape(
                    node.id,
                    format!("{} inputs differ: {first} vs {bad}", node.op),
                ));
            }
            Ok(first.clone())
        }
        OpKind::Concat => {
            if first.rank() < 2 {
                return Err(GraphError::shape(node.id, format!("cannot concat {first}")));
            }
            let mut dims = first.dims().to_vec();
            dims[1] = 0;
            for s in inputs {
                let compatible = s.rank() == first.rank()
                    && s.dims().iter().zip(first.dims()).enumerate().all(|(i, (a, b))| i == 1 || a == b);
                if !compatible {
                    return Err(GraphError::shape(
                        node.id,
                        format!("Concat inputs differ outside the channel axis: {first} vs {s}"),
                    ));
                }
                dims[1] += s.dims()[1];
            }
            Ok(Shape(dims))
        }
        OpKind::ReLU | OpKind::Dropout | OpKind::Softmax => Ok(first.clone()),
    }
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    input_shape: [usize; 3],
    nodes: Vec<NodeRecord>,
    edges: Vec<[NodeId; 2]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    op: String,
    #[serde(default)]
    attrs: BTreeMap<String, i64>,
}

/// Parses the textual graph format. No validation beyond parsing.
pub fn parse_graph(text: &str) -> Result<ComputationGraph, GraphError> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Parse(e.to_string()))?;
    Ok(ComputationGraph {
        input_shape: file.input_shape,
        nodes: file
            .nodes
            .into_iter()
            .map(|r| OperatorNode {
                id: r.id,
                op: OpKind::from_name_lossy(&r.op),
                attrs: r.attrs,
                output_shape: None,
            })
            .collect(),
        edges: file.edges.into_iter().map(|[a, b]| (a, b)).collect(),
    })
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<ComputationGraph, GraphError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_graph(&text)
}

pub fn graph_to_string(g: &ComputationGraph) -> String {
    let file = GraphFile {
        input_shape: g.input_shape,
        nodes: g
            .nodes
            .iter()
            .map(|n| NodeRecord {
                id: n.id,
                op: n.op.name().to_string(),
                attrs: n.attrs.clone(),
            })
            .collect(),
        edges: g.edges.iter().map(|&(a, b)| [a, b]).collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("graph file serialises");
    s.push('\n');
    s
}

pub fn save_graph(g: &ComputationGraph, path: impl AsRef<Path>) -> Result<(), GraphError> {
    let path = path.as_ref();
    fs::write(path, graph_to_string(g)).map_err(|source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    })
}
