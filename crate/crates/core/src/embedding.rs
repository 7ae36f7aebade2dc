//! Graph embeddings: Weisfeiler-Lehman rooted-subgraph tokens fed to a
//! skipgram model with negative sampling (graph vector predicts its tokens).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ComputationGraph, NodeId};
use crate::hash::{fnv1a64_str, mix, HASH_ALGORITHM};

pub const EMBEDDING_MAGIC: &str = "ABACUS-EMB-1";
pub const OBJECTIVE: &str = "skipgram-negative-sampling(graph->token), unigram^0.75 noise";

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding corpus is empty")]
    EmptyCorpus,
    #[error("invalid embedding configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding artifact: {0}")]
    Parse(String),
    #[error("not a {EMBEDDING_MAGIC} artifact (found `{0}`)")]
    VersionMismatch(String),
}

/// Multiset of WL labels for one graph, kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WlTokenBag {
    pub graph_id: String,
    pub tokens: Vec<String>,
}

impl WlTokenBag {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.graph_id = id.into();
        self
    }

    /// Stable hash of the sorted token multiset.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64_str(&self.tokens.join("\u{1f}"))
    }
}

/// WL relabelling over in-neighbours, depths `0..=depth`.
pub fn wl_tokens(g: &ComputationGraph, depth: usize) -> WlTokenBag {
    let index: HashMap<NodeId, usize> = g.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); g.nodes.len()];
    for &(a, b) in &g.edges {
        if let (Some(&a), Some(&b)) = (index.get(&a), index.get(&b)) {
            preds[b].push(a);
        }
    }

    let mut labels: Vec<String> = g.nodes.iter().map(|n| n.op.name().to_string()).collect();
    let mut tokens = labels.clone();
    for _ in 0..depth {
        labels = (0..labels.len())
            .map(|v| {
                let mut inn: Vec<&str> = preds[v].iter().map(|&u| labels[u].as_str()).collect();
                inn.sort_unstable();
                let composite = format!("{}({})", labels[v], inn.join(","));
                format!("{:016x}", fnv1a64_str(&composite))
            })
            .collect();
        tokens.extend(labels.iter().cloned());
    }
    tokens.sort_unstable();
    WlTokenBag {
        graph_id: String::new(),
        tokens,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub dims: usize,
    pub depth: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards zero.
    pub alpha: f64,
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            dims: 64,
            depth: 2,
            epochs: 10,
            alpha: 0.025,
            negative_samples: 5,
            seed: 0,
        }
    }
}

impl EmbeddingParams {
    fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::InvalidConfig(m.into()));
        if self.dims == 0 {
            return bad("dims must be positive");
        }
        if self.negative_samples == 0 {
            return bad("negative_samples must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub params: EmbeddingParams,
    pub hash_algorithm: String,
    pub objective: String,
    pub graph_ids: Vec<String>,
    pub graph_vectors: Vec<Vec<f64>>,
    graph_fingerprints: Vec<u64>,
    /// Sorted vocabulary.
    pub tokens: Vec<String>,
    pub token_vectors: Vec<Vec<f64>>,
    token_counts: Vec<u64>,
    /// Mean per-pair loss for each epoch, measured before that pair's update.
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Negative-sampling loss for one (graph, token) pair:
/// `-ln σ(g·c⁺) - Σ ln σ(-g·c⁻)`.
pub fn pair_loss(g: &[f64], pos: &[f64], negs: &[&[f64]]) -> f64 {
    let mut l = -sigmoid(dot(g, pos)).ln();
    for n in negs {
        l -= sigmoid(-dot(g, n)).ln();
    }
    l
}

/// Gradients of [`pair_loss`] with respect to the graph vector, the positive
/// token vector and each negative token vector.
pub fn pair_gradient(g: &[f64], pos: &[f64], negs: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let gp = sigmoid(dot(g, pos)) - 1.0;
    let mut dg: Vec<f64> = pos.iter().map(|c| gp * c).collect();
    let dpos = g.iter().map(|x| gp * x).collect();
    let dnegs = negs
        .iter()
        .map(|n| {
            let gn = sigmoid(dot(g, n));
            for (d, c) in dg.iter_mut().zip(n.iter()) {
                *d += gn * c;
            }
            g.iter().map(|x| gn * x).collect()
        })
        .collect();
    (dg, dpos, dnegs)
}

/// Seeded initial graph vector, uniform in `(-0.5, 0.5) / dims`.
pub fn initial_vector(seed: u64, stream: u64, dims: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, stream));
    (0..dims)
        .map(|_| (rng.gen::<f64>() - 0.5) / dims as f64)
        .collect()
}

/// One SGD step on a pair. Token vectors are updated only when `tokens` is
/// mutable; returns the loss before the step.
fn sgd_step(
    g: &mut [f64],
    tokens: &mut [Vec<f64>],
    pos: usize,
    negs: &[usize],
    alpha: f64,
    update_tokens: bool,
) -> f64 {
    let mut grad_g = vec![0.0; g.len()];
    let mut loss = 0.0;
    for (t, label) in std::iter::once((pos, 1.0)).chain(negs.iter().map(|&n| (n, 0.0))) {
        let s = sigmoid(dot(g, &tokens[t]));
        loss -= if label == 1.0 { s.ln() } else { (1.0 - s).ln() };
        let coef = s - label;
        for (d, c) in grad_g.iter_mut().zip(&tokens[t]) {
            *d += coef * c;
        }
        if update_tokens {
            for (c, x) in tokens[t].iter_mut().zip(g.iter()) {
                *c -= alpha * coef * x;
            }
        }
    }
    for (x, d) in g.iter_mut().zip(&grad_g) {
        *x -= alpha * d;
    }
    loss
}

struct NoiseSampler {
    dist: WeightedIndex<f64>,
}

impl NoiseSampler {
    fn new(counts: &[u64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        NoiseSampler {
            dist: WeightedIndex::new(weights).expect("vocabulary has positive counts"),
        }
    }

    /// `k` draws, skipping the positive token when another choice exists.
    fn draw(&self, rng: &mut ChaCha8Rng, k: usize, pos: usize, vocab: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let t = self.dist.sample(rng);
            if t != pos || vocab == 1 {
                out.push(t);
            }
        }
        out
    }
}

/// Trains graph and token vectors on a corpus of token bags.
pub fn train_embeddings(corpus: &[WlTokenBag], params: &EmbeddingParams) -> Result<EmbeddingModel, EmbeddingError> {
    params.validate()?;
    if corpus.is_empty() {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for bag in corpus {
        for t in &bag.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let tokens: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
    let token_counts: Vec<u64> = counts.values().copied().collect();
    let index: HashMap<&str, usize> = tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let docs: Vec<Vec<usize>> = corpus
        .iter()
        .map(|b| b.tokens.iter().map(|t| index[t.as_str()]).collect())
        .collect();

    let dims = params.dims;
    let mut graph_vectors: Vec<Vec<f64>> = (0..corpus.len())
        .map(|i| initial_vector(params.seed, i as u64, dims))
        .collect();
    let mut token_vectors = vec![vec![0.0; dims]; tokens.len()];
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    if !tokens.is_empty() {
        let noise = NoiseSampler::new(&token_counts);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(params.seed, u64::MAX));
        let mut pairs: Vec<(usize, usize)> = docs
            .iter()
            .enumerate()
            .flat_map(|(g, d)| d.iter().map(move |&t| (g, t)))
            .collect();
        let total = (pairs.len() * params.epochs).max(1) as f64;
        let mut step = 0usize;
        for _ in 0..params.epochs {
            pairs.shuffle(&mut rng);
            let mut loss = 0.0;
            for &(g, t) in &pairs {
                let alpha = params.alpha * (1.0 - step as f64 / total).max(1e-4);
                let negs = noise.draw(&mut rng, params.negative_samples, t, tokens.len());
                loss += sgd_step(&mut graph_vectors[g], &mut token_vectors, t, &negs, alpha, true);
                step += 1;
            }
            epoch_losses.push(loss / pairs.len() as f64);
        }
    }

    Ok(EmbeddingModel {
        params: params.clone(),
        hash_algorithm: HASH_ALGORITHM.to_string(),
        objective: OBJECTIVE.to_string(),
        graph_ids: corpus.iter().map(|b| b.graph_id.clone()).collect(),
        graph_vectors,
        graph_fingerprints: corpus.iter().map(WlTokenBag::fingerprint).collect(),
        tokens,
        token_vectors,
        token_counts,
        epoch_losses,
    })
}

impl EmbeddingModel {
    pub fn dims(&self) -> usize {
        self.params.dims
    }

    pub fn vector(&self, graph_id: &str) -> Option<&[f64]> {
        self.graph_ids
            .iter()
            .position(|g| g == graph_id)
            .map(|i| self.graph_vectors[i].as_slice())
    }

    /// Vector for a bag. A bag identical to a corpus graph's returns that
    /// graph's trained vector; otherwise a fresh vector is fitted against the
    /// frozen token vectors. Unseen tokens are skipped.
    pub fn embed_bag(&self, bag: &WlTokenBag) -> Vec<f64> {
        let fp = bag.fingerprint();
        if let Some(i) = self.graph_fingerprints.iter().position(|&f| f == fp) {
            return self.graph_vectors[i].clone();
        }
        let mut v = initial_vector(self.params.seed, fp, self.dims());
        let known: Vec<usize> = bag
            .tokens
            .iter()
            .filter_map(|t| self.tokens.binary_search(t).ok())
            .collect();
        if known.is_empty() {
            return v;
        }
        let noise = NoiseSampler::new(&self.token_counts);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.params.seed, !fp));
        let mut frozen = self.token_vectors.clone();
        let mut order = known;
        let total = (order.len() * self.params.epochs).max(1) as f64;
        let mut step = 0usize;
        for _ in 0..self.params.epochs {
            order.shuffle(&mut rng);
            for &t in &order {
                let alpha = self.params.alpha * (1.0 - step as f64 / total).max(1e-4);
                let negs = noise.draw(&mut rng, self.params.negative_samples, t, self.tokens.len());
                sgd_step(&mut v, &mut frozen, t, &negs, alpha, false);
                step += 1;
            }
        }
        v
    }

    pub fn embed(&self, g: &ComputationGraph) -> Vec<f64> {
        self.embed_bag(&wl_tokens(g, self.params.depth))
    }

    pub fn to_artifact(&self) -> String {
        let body = serde_json::to_string(self).expect("embedding model serialises");
        format!("{EMBEDDING_MAGIC}\n{body}\n")
    }

    pub fn from_artifact(text: &str) -> Result<Self, EmbeddingError> {
        let (magic, body) = text.split_once('\n').unwrap_or((text, ""));
        if magic.trim_end() != EMBEDDING_MAGIC {
            return Err(EmbeddingError::VersionMismatch(magic.chars().take(32).collect()));
        }
        let model: EmbeddingModel =
            serde_json::from_str(body).map_err(|e| EmbeddingError::Parse(e.to_string()))?;
        if model.hash_algorithm != HASH_ALGORITHM {
            return Err(EmbeddingError::Parse(format!(
                "token hash `{}` is not supported",
                model.hash_algorithm
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_artifact()).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_artifact(&text)
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let n = dot(a, a).sqrt() * dot(b, b).sqrt();
    if n == 0.0 {
        0.0
    } else {
        dot(a, b) / n
    }
}
