//! Model zoo training, selection by mean relative error, and prediction.
//!
//! Every zoo member is fitted separately for the time and memory targets on
//! 80% of the training set and scored on the remaining 20%. Per target the
//! member with the lowest validation MRE wins and is refitted on the whole
//! training set. The result is a [`TrainedPredictor`], persisted as a
//! versioned text artifact.

pub mod dataset;
mod linear;
mod tree;

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataset::{split_dataset, DataPoint, Dataset, Provenance, Target};
use linear::{Knn, Ridge};
use tree::{BinnedMatrix, Boosted, Forest, RegressionTree, SplitRule, TreeParams};

use crate::features::{FeatureLayout, FeatureVector};

pub const PREDICTOR_MAGIC: &str = "ABACUS-PRED-1";

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("need at least 2 data points, got {0}")]
    TooFewPoints(usize),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid data point: {0}")]
    InvalidTarget(String),
    #[error("prediction/truth length mismatch: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("truth value at index {0} is not positive")]
    NonPositiveTruth(usize),
    #[error("inconsistent feature layout: {0}")]
    InconsistentLayout(String),
    #[error("feature layout hash {found:016x} does not match predictor layout {expected:016x}")]
    LayoutMismatch { expected: u64, found: u64 },
    #[error("not a {PREDICTOR_MAGIC} artifact (found `{0}`)")]
    VersionMismatch(String),
}

impl PredictorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PredictorError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Mean relative error, `mean(|pred - truth| / truth)`.
pub fn mre(pred: &[f64], truth: &[f64]) -> Result<f64, PredictorError> {
    if pred.len() != truth.len() || truth.is_empty() {
        return Err(PredictorError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if let Some(i) = truth.iter().position(|&t| t.is_nan() || t <= 0.0) {
        return Err(PredictorError::NonPositiveTruth(i));
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs() / t).sum();
    Ok(sum / truth.len() as f64)
}

/// Hyperparameters of one zoo member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    DecisionTree {
        max_depth: Option<usize>,
        min_samples_leaf: usize,
    },
    RandomForest {
        n_trees: usize,
        max_features: f64,
        min_samples_leaf: usize,
    },
    GradientBoosting {
        rounds: usize,
        max_depth: usize,
        learning_rate: f64,
        min_samples_leaf: usize,
    },
    ExtraTrees {
        n_trees: usize,
        max_features: f64,
        min_samples_leaf: usize,
    },
    /// Ridge fit, then gradient-boosted trees on its residuals. Predictions
    /// are clamped to the training target range.
    LinearBoosted {
        lambda: f64,
        rounds: usize,
        max_depth: usize,
        learning_rate: f64,
        min_samples_leaf: usize,
    },
    Knn {
        k: usize,
    },
    Ridge {
        lambda: f64,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::DecisionTree { .. } => "decision_tree",
            ModelSpec::RandomForest { .. } => "random_forest",
            ModelSpec::GradientBoosting { .. } => "gradient_boosting",
            ModelSpec::ExtraTrees { .. } => "extra_trees",
            ModelSpec::LinearBoosted { .. } => "linear_boosted",
            ModelSpec::Knn { .. } => "knn",
            ModelSpec::Ridge { .. } => "ridge",
        }
    }

    fn is_tree_based(&self) -> bool {
        !matches!(
            self,
            ModelSpec::Knn { .. } | ModelSpec::Ridge { .. } | ModelSpec::LinearBoosted { .. }
        )
    }
}

/// A zoo entry: model hyperparameters plus the space it is fitted in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooMember {
    pub model: ModelSpec,
    /// Fit `ln(target)` and exponentiate predictions.
    pub log_target: bool,
    /// Apply signed `ln(1 + |x|)` before standardising (kNN / ridge only).
    pub log_features: bool,
}

impl ZooMember {
    pub fn new(model: ModelSpec, log_target: bool, log_features: bool) -> Self {
        let log_features = log_features && !model.is_tree_based();
        ZooMember {
            model,
            log_target,
            log_features,
        }
    }

    pub fn label(&self) -> String {
        let params = match &self.model {
            ModelSpec::DecisionTree { max_depth, .. } => match max_depth {
                Some(d) => format!("depth={d}"),
                None => "depth=inf".into(),
            },
            ModelSpec::RandomForest { n_trees, .. } | ModelSpec::ExtraTrees { n_trees, .. } => {
                format!("trees={n_trees}")
            }
            ModelSpec::GradientBoosting {
                rounds, max_depth, ..
            } => format!("rounds={rounds},depth={max_depth}"),
            ModelSpec::LinearBoosted {
                lambda,
                rounds,
                max_depth,
                ..
            } => format!("lambda={lambda},rounds={rounds},depth={max_depth}"),
            ModelSpec::Knn { k } => format!("k={k}"),
            ModelSpec::Ridge { lambda } => format!("lambda={lambda}"),
        };
        let mut space = Vec::new();
        if self.log_features {
            space.push("logx");
        }
        if self.log_target {
            space.push("logy");
        }
        if space.is_empty() {
            format!("{}({params})", self.model.kind())
        } else {
            format!("{}({params};{})", self.model.kind(), space.join(","))
        }
    }
}

/// How provenance columns enter the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProvenanceMode {
    /// Features only; one predictor serves every machine/framework.
    Ignore,
    /// Append machine and framework as category indices.
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooConfig {
    pub members: Vec<ZooMember>,
    /// Share of the training set held out for model selection.
    pub validation_fraction: f64,
    pub provenance: ProvenanceMode,
    pub max_bins: usize,
}

impl Default for ZooConfig {
    fn default() -> Self {
        let trees = |model| ZooMember::new(model, true, false);
        ZooConfig {
            members: vec![
                trees(ModelSpec::DecisionTree {
                    max_depth: None,
                    min_samples_leaf: 1,
                }),
                trees(ModelSpec::RandomForest {
                    n_trees: 200,
                    max_features: 1.0,
                    min_samples_leaf: 1,
                }),
                trees(ModelSpec::GradientBoosting {
                    rounds: 300,
                    max_depth: 6,
                    learning_rate: 0.1,
                    min_samples_leaf: 1,
                }),
                trees(ModelSpec::ExtraTrees {
                    n_trees: 200,
                    max_features: 1.0,
                    min_samples_leaf: 1,
                }),
                ZooMember::new(ModelSpec::Knn { k: 5 }, true, true),
                ZooMember::new(ModelSpec::Ridge { lambda: 1.0 }, false, false),
                ZooMember::new(ModelSpec::Ridge { lambda: 1e-6 }, false, false),
                ZooMember::new(ModelSpec::Ridge { lambda: 1e-6 }, true, true),
                ZooMember::new(
                    ModelSpec::LinearBoosted {
                        lambda: 1.0,
                        rounds: 300,
                        max_depth: 6,
                        learning_rate: 0.1,
                        min_samples_leaf: 1,
                    },
                    true,
                    true,
                ),
            ],
            validation_fraction: 0.2,
            provenance: ProvenanceMode::Categorical,
            max_bins: tree::MAX_BINS,
        }
    }
}

impl ZooConfig {
    /// A zoo with a single member, otherwise default settings.
    pub fn only(member: ZooMember) -> Self {
        ZooConfig {
            members: vec![member],
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<(), PredictorError> {
        if self.members.is_empty() {
            return Err(PredictorError::InvalidConfig("zoo has no members".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(PredictorError::InvalidConfig(format!(
                "validation fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !(2..=tree::MAX_BINS).contains(&self.max_bins) {
            return Err(PredictorError::InvalidConfig(format!(
                "max_bins must be in 2..={}",
                tree::MAX_BINS
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum FittedModel {
    Tree(RegressionTree),
    Forest(Forest),
    Boosted(Boosted),
    LinearBoosted {
        linear: Ridge,
        residual: Boosted,
        lo: f64,
        hi: f64,
    },
    Knn(Knn),
    Ridge(Ridge),
}

impl FittedModel {
    fn predict(&self, row: &[f64]) -> f64 {
        match self {
            FittedModel::Tree(m) => m.predict(row),
            FittedModel::Forest(m) => m.predict(row),
            FittedModel::Boosted(m) => m.predict(row),
            FittedModel::LinearBoosted {
                linear,
                residual,
                lo,
                hi,
            } => (linear.predict(row) + residual.predict(row)).clamp(*lo, *hi),
            FittedModel::Knn(m) => m.predict(row),
            FittedModel::Ridge(m) => m.predict(row),
        }
    }
}

fn fit_member(
    member: &ZooMember,
    rows: &[Vec<f64>],
    binned: &BinnedMatrix,
    y: &[f64],
    seed: u64,
) -> FittedModel {
    let y: Vec<f64> = if member.log_target {
        y.iter().map(|v| v.ln()).collect()
    } else {
        y.to_vec()
    };
    match member.model {
        ModelSpec::DecisionTree {
            max_depth,
            min_samples_leaf,
        } => {
            let params = TreeParams {
                max_depth,
                min_samples_leaf,
                ..Default::default()
            };
            let all: Vec<usize> = (0..rows.len()).collect();
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            FittedModel::Tree(RegressionTree::fit(binned, &y, &all, &params, &mut rng).0)
        }
        ModelSpec::RandomForest {
            n_trees,
            max_features,
            min_samples_leaf,
        } => {
            let params = TreeParams {
                min_samples_leaf,
                max_features,
                ..Default::default()
            };
            FittedModel::Forest(Forest::fit(binned, &y, n_trees, true, &params, seed))
        }
        ModelSpec::ExtraTrees {
            n_trees,
            max_features,
            min_samples_leaf,
        } => {
            let params = TreeParams {
                min_samples_leaf,
                max_features,
                split: SplitRule::Random,
                ..Default::default()
            };
            FittedModel::Forest(Forest::fit(binned, &y, n_trees, false, &params, seed))
        }
        ModelSpec::GradientBoosting {
            rounds,
            max_depth,
            learning_rate,
            min_samples_leaf,
        } => {
            let params = TreeParams {
                max_depth: Some(max_depth),
                min_samples_leaf,
                ..Default::default()
            };
            FittedModel::Boosted(Boosted::fit(binned, &y, rounds, learning_rate, &params, seed))
        }
        ModelSpec::LinearBoosted {
            lambda,
            rounds,
            max_depth,
            learning_rate,
            min_samples_leaf,
        } => {
            let linear = Ridge::fit(rows, &y, lambda, member.log_features);
            let r: Vec<f64> = rows.iter().zip(&y).map(|(row, t)| t - linear.predict(row)).collect();
            let params = TreeParams {
                max_depth: Some(max_depth),
                min_samples_leaf,
                ..Default::default()
            };
            let residual = Boosted::fit(binned, &r, rounds, learning_rate, &params, seed);
            FittedModel::LinearBoosted {
                linear,
                residual,
                lo: y.iter().copied().fold(f64::INFINITY, f64::min),
                hi: y.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        }
        ModelSpec::Knn { k } => FittedModel::Knn(Knn::fit(rows, &y, k, member.log_features)),
        ModelSpec::Ridge { lambda } => {
            FittedModel::Ridge(Ridge::fit(rows, &y, lambda, member.log_features))
        }
    }
}

/// Category tables for provenance columns, built from the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProvenanceTables {
    mode: ProvenanceMode,
    machines: Vec<String>,
    frameworks: Vec<String>,
}

impl ProvenanceTables {
    fn build(mode: ProvenanceMode, ds: &Dataset) -> Self {
        let uniq = |f: fn(&Provenance) -> &String| {
            let mut v: Vec<String> = ds.points.iter().map(|p| f(&p.provenance).clone()).collect();
            v.sort();
            v.dedup();
            v
        };
        match mode {
            ProvenanceMode::Ignore => ProvenanceTables {
                mode,
                machines: vec![],
                frameworks: vec![],
            },
            ProvenanceMode::Categorical => ProvenanceTables {
                mode,
                machines: uniq(|p| &p.machine_id),
                frameworks: uniq(|p| &p.framework_id),
            },
        }
    }

    /// Feature row followed by provenance codes; unseen categories get -1.
    fn row(&self, features: &[f64], prov: Option<&Provenance>) -> Vec<f64> {
        let mut row = features.to_vec();
        if self.mode == ProvenanceMode::Categorical {
            let code = |table: &[String], v: Option<&String>| {
                v.and_then(|v| table.binary_search(v).ok())
                    .map_or(-1.0, |i| i as f64)
            };
            row.push(code(&self.machines, prov.map(|p| &p.machine_id)));
            row.push(code(&self.frameworks, prov.map(|p| &p.framework_id)));
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberScore {
    pub target: Target,
    pub member: String,
    pub validation_mre: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub validation_fraction: f64,
    pub n_train: usize,
    pub scores: Vec<MemberScore>,
    /// Targets whose training values were all identical.
    pub degenerate: Vec<Target>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SelectedModel {
    member: ZooMember,
    validation_mre: f64,
    model: FittedModel,
}

impl SelectedModel {
    fn predict(&self, row: &[f64]) -> f64 {
        let raw = self.model.predict(row);
        let v = if self.member.log_target { raw.exp() } else { raw };
        if v.is_finite() {
            v.max(0.0)
        } else if v == f64::INFINITY {
            f64::MAX
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub time_s: f64,
    pub mem_mib: f64,
}

impl Prediction {
    pub fn get(&self, t: Target) -> f64 {
        match t {
            Target::Time => self.time_s,
            Target::Memory => self.mem_mib,
        }
    }
}

/// The selected (time, memory) model pair with everything needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPredictor {
    layout: FeatureLayout,
    layout_hash: u64,
    provenance: ProvenanceTables,
    time: SelectedModel,
    memory: SelectedModel,
    metadata: TrainingMetadata,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

/// Fits the zoo for both targets and keeps the lowest-validation-MRE member
/// of each, refitted on all of `train_set`. Deterministic for a given seed.
pub fn train(train_set: &Dataset, zoo: &ZooConfig, seed: u64) -> Result<TrainedPredictor, PredictorError> {
    zoo.validate()?;
    if train_set.is_empty() {
        return Err(PredictorError::EmptyTrainingSet);
    }
    train_set.check()?;

    let provenance = ProvenanceTables::build(zoo.provenance, train_set);
    let rows: Vec<Vec<f64>> = train_set
        .points
        .iter()
        .map(|p| provenance.row(&p.features, Some(&p.provenance)))
        .collect();
    let n = rows.len();
    let (fit_idx, val_idx) = if n >= 2 {
        dataset::split_indices(n, 1.0 - zoo.validation_fraction, tree::mix(seed, 0x5EED))
    } else {
        (vec![0], vec![0])
    };
    let fit_rows: Vec<Vec<f64>> = fit_idx.iter().map(|&i| rows[i].clone()).collect();
    let fit_bins = BinnedMatrix::new(&fit_rows, zoo.max_bins);

    let targets: Vec<(Target, Vec<f64>)> = Target::BOTH
        .iter()
        .map(|&t| (t, train_set.targets(t)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..targets.len())
        .flat_map(|t| (0..zoo.members.len()).map(move |m| (t, m)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(t, m)| {
            let y = &targets[t].1;
            let fit_y: Vec<f64> = fit_idx.iter().map(|&i| y[i]).collect();
            let member = &zoo.members[m];
            let selected = SelectedModel {
                member: member.clone(),
                validation_mre: f64::NAN,
                model: fit_member(member, &fit_rows, &fit_bins, &fit_y, member_seed(seed, t, m)),
            };
            let pred: Vec<f64> = val_idx.iter().map(|&i| selected.predict(&rows[i])).collect();
            let truth: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();
            mre(&pred, &truth).unwrap_or(f64::INFINITY)
        })
        .collect();

    let all_bins = BinnedMatrix::new(&rows, zoo.max_bins);
    let mut member_scores = Vec::new();
    let mut chosen = Vec::new();
    for (t, (target, y)) in targets.iter().enumerate() {
        let row_scores = &scores[t * zoo.members.len()..(t + 1) * zoo.members.len()];
        let mut best = 0;
        for (m, &s) in row_scores.iter().enumerate() {
            let s = if s.is_nan() { f64::INFINITY } else { s };
            member_scores.push(MemberScore {
                target: *target,
                member: zoo.members[m].label(),
                validation_mre: s,
            });
            if s < row_scores[best] || row_scores[best].is_nan() {
                best = m;
            }
        }
        let member = zoo.members[best].clone();
        log::info!(
            "{target}: selected {} (validation MRE {:.4})",
            member.label(),
            row_scores[best]
        );
        let model = fit_member(&member, &rows, &all_bins, y, member_seed(seed, t, best));
        chosen.push(SelectedModel {
            member,
            validation_mre: row_scores[best],
            model,
        });
    }

    let degenerate = targets
        .iter()
        .filter(|(_, y)| y.iter().all(|v| *v == y[0]))
        .map(|(t, _)| *t)
        .collect();
    let memory = chosen.pop().unwrap();
    let time = chosen.pop().unwrap();
    Ok(TrainedPredictor {
        layout: train_set.layout.clone(),
        layout_hash: train_set.layout.hash(),
        provenance,
        time,
        memory,
        metadata: TrainingMetadata {
            seed,
            validation_fraction: zoo.validation_fraction,
            n_train: n,
            scores: member_scores,
            degenerate,
        },
    })
}

fn member_seed(seed: u64, target: usize, member: usize) -> u64 {
    tree::mix(seed, ((target as u64) << 32) | member as u64)
}

impl TrainedPredictor {
    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn metadata(&self) -> &TrainingMetadata {
        &self.metadata
    }

    pub fn selected_member(&self, t: Target) -> &ZooMember {
        &self.selected(t).member
    }

    pub fn selected_validation_mre(&self, t: Target) -> f64 {
        self.selected(t).validation_mre
    }

    fn selected(&self, t: Target) -> &SelectedModel {
        match t {
            Target::Time => &self.time,
            Target::Memory => &self.memory,
        }
    }

    fn check_layout(&self, layout_hash: u64) -> Result<(), PredictorError> {
        if layout_hash != self.layout_hash {
            return Err(PredictorError::LayoutMismatch {
                expected: self.layout_hash,
                found: layout_hash,
            });
        }
        Ok(())
    }

    fn predict_row(&self, features: &[f64], prov: Option<&Provenance>) -> Prediction {
        let row = self.provenance.row(features, prov);
        Prediction {
            time_s: self.time.predict(&row),
            mem_mib: self.memory.predict(&row),
        }
    }

    /// Predicts for a feature vector with unknown machine/framework.
    pub fn predict(&self, f: &FeatureVector) -> Result<Prediction, PredictorError> {
        self.predict_for(f, None)
    }

    pub fn predict_for(
        &self,
        f: &FeatureVector,
        provenance: Option<&Provenance>,
    ) -> Result<Prediction, PredictorError> {
        self.check_layout(f.layout.hash())?;
        if f.values.len() != self.layout.len() {
            return Err(PredictorError::InconsistentLayout(format!(
                "{} values for a {}-column layout",
                f.values.len(),
                self.layout.len()
            )));
        }
        Ok(self.predict_row(&f.values, provenance))
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<Prediction>, PredictorError> {
        self.check_layout(ds.layout.hash())?;
        ds.check()?;
        Ok(ds
            .points
            .par_iter()
            .map(|p| self.predict_row(&p.features, Some(&p.provenance)))
            .collect())
    }

    /// Per-target MRE on a labelled dataset.
    pub fn evaluate(&self, ds: &Dataset) -> Result<(f64, f64), PredictorError> {
        let preds = self.predict_dataset(ds)?;
        let score = |t: Target| {
            let p: Vec<f64> = preds.iter().map(|x| x.get(t)).collect();
            mre(&p, &ds.targets(t))
        };
        Ok((score(Target::Time)?, score(Target::Memory)?))
    }

    pub fn to_artifact(&self) -> String {
        let body = serde_json::to_string(self).expect("predictor serialises");
        format!("{PREDICTOR_MAGIC}\n{body}\n")
    }

    pub fn from_artifact(text: &str) -> Result<Self, PredictorError> {
        let (magic, body) = text.split_once('\n').unwrap_or((text, ""));
        if magic.trim_end() != PREDICTOR_MAGIC {
            return Err(PredictorError::VersionMismatch(magic.chars().take(32).collect()));
        }
        serde_json::from_str(body).map_err(|e| PredictorError::Parse(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictorError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_artifact()).map_err(|e| PredictorError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PredictorError::io(path, e))?;
        Self::from_artifact(&text)
    }
}
