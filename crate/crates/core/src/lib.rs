//! Training-cost prediction for deep neural networks.
//!
//! The crate turns a computation graph plus a run configuration into a
//! feature vector, fits shallow regressors that predict training time and
//! peak device memory, and schedules training jobs onto machines with a
//! genetic algorithm driven by those predictions.
//!
//! | module | what it does |
//! |---|---|
//! | [`graph`] | graph model, file format, validation, topological order, shape inference, shape-based memory baseline |
//! | [`nsm`] | network structural matrix (operator-pair edge counts) |
//! | [`features`] | parameter / FLOP / layer counts and feature-vector assembly |
//! | [`embedding`] | Weisfeiler-Lehman tokens and skipgram graph embeddings |
//! | [`predictor`] | dataset I/O, model zoo, selection by mean relative error |
//! | [`netgen`] | random network generator and synthetic cost oracle |
//! | [`scheduler`] | makespan, memory feasibility, GA / exhaustive / random schedulers |
//! | [`cli`] | the `abacus` command-line front end |
//!
//! Runnable walkthroughs of each capability live in `examples/`.

pub mod cli;
pub mod embedding;
pub mod features;
pub mod graph;
pub mod hash;
pub mod netgen;
pub mod nsm;
pub mod predictor;
pub mod scheduler;

pub use features::{extract_features, FeatureLayout, FeatureVector, Optimizer, RunConfig, Structural};
pub use graph::{load_graph, save_graph, ComputationGraph, GraphError, NodeId, OpKind, OperatorNode};
pub use nsm::{build_nsm, Nsm, OperatorVocabulary};
