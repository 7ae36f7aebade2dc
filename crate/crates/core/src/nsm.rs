//! Network structural matrix.
//!
//! Entry `(i, j)` counts edges whose source operator has kind `i` and whose
//! sink has kind `j`. Rows and columns follow a fixed [`OperatorVocabulary`],
//! so matrices from different networks line up column for column.

use std::fmt::Write as _;

use crate::graph::{ComputationGraph, GraphError, NodeId, OpKind};

/// Ordered operator kinds: names sorted lexicographically, `Other` last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatorVocabulary {
    kinds: Vec<OpKind>,
}

impl Default for OperatorVocabulary {
    fn default() -> Self {
        OperatorVocabulary::new(OpKind::ALL)
    }
}

impl OperatorVocabulary {
    /// Builds a vocabulary from any subset of kinds. Duplicates are dropped
    /// and `Other` is always present, so every operator has a slot.
    pub fn new(kinds: impl IntoIterator<Item = OpKind>) -> Self {
        let mut kinds: Vec<OpKind> = kinds.into_iter().filter(|k| *k != OpKind::Other).collect();
        kinds.sort_by_key(|k| k.name());
        kinds.dedup();
        kinds.push(OpKind::Other);
        OperatorVocabulary { kinds }
    }

    pub fn kinds(&self) -> &[OpKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Slot for an operator kind, falling back to `Other`.
    pub fn index_of(&self, op: OpKind) -> usize {
        self.kinds
            .iter()
            .position(|k| *k == op)
            .unwrap_or(self.kinds.len() - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Nsm {
    vocabulary: OperatorVocabulary,
    counts: Vec<u64>,
}

impl Nsm {
    pub fn zeros(vocabulary: OperatorVocabulary) -> Self {
        let n = vocabulary.len();
        Nsm {
            vocabulary,
            counts: vec![0; n * n],
        }
    }

    pub fn vocabulary(&self) -> &OperatorVocabulary {
        &self.vocabulary
    }

    pub fn dim(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn get(&self, src: OpKind, dst: OpKind) -> u64 {
        let (i, j) = (self.vocabulary.index_of(src), self.vocabulary.index_of(dst));
        self.counts[i * self.dim() + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Row-major copy in vocabulary order.
    pub fn flatten(&self) -> Vec<u64> {
        self.counts.clone()
    }

    /// Column names of the flattened matrix, `Src->Dst`.
    pub fn flat_names(&self) -> Vec<String> {
        let kinds = self.vocabulary.kinds();
        kinds
            .iter()
            .flat_map(|a| kinds.iter().map(move |b| format!("{a}->{b}")))
            .collect()
    }

    /// CSV with a header row and a header column of operator names.
    pub fn to_csv(&self) -> String {
        let kinds = self.vocabulary.kinds();
        let mut out = String::from("src\\dst");
        for k in kinds {
            write!(out, ",{k}").unwrap();
        }
        out.push('\n');
        for (i, k) in kinds.iter().enumerate() {
            out.push_str(k.name());
            for v in &self.counts[i * kinds.len()..(i + 1) * kinds.len()] {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the structural matrix of `g`. Each edge increments exactly one
/// cell, so the result does not depend on traversal order.
pub fn build_nsm(g: &ComputationGraph, vocabulary: &OperatorVocabulary) -> Result<Nsm, GraphError> {
    let report = g.validate();
    if !report.ok {
        return Err(GraphError::Invalid(report));
    }
    let kind_of = |id: NodeId| {
        g.node(id)
            .map(|n| n.op)
            .ok_or(GraphError::UnknownNode(id))
    };
    let mut m = Nsm::zeros(vocabulary.clone());
    let dim = m.dim();
    for &(src, dst) in &g.edges {
        let i = vocabulary.index_of(kind_of(src)?);
        let j = vocabulary.index_of(kind_of(dst)?);
        m.counts[i * dim + j] += 1;
    }
    Ok(m)
}

/// Free-function form of [`Nsm::flatten`].
pub fn flatten_nsm(m: &Nsm) -> Vec<u64> {
    m.flatten()
}
