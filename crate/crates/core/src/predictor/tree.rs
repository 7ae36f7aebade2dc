//! CART regression trees over histogram-binned features, and the ensembles
//! built from them (bagged forests, extra-trees, gradient boosting).

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub(crate) use crate::hash::mix;

pub const MAX_BINS: usize = 256;

/// Feature-major matrix of bin indices with the raw-value cut points needed
/// to route unseen rows.
pub struct BinnedMatrix {
    n_rows: usize,
    bins: Vec<Vec<u8>>,
    /// `cuts[f][b]`: a row goes left of a split at bin `b` iff `x <= cuts[f][b]`.
    cuts: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub fn new(rows: &[Vec<f64>], max_bins: usize) -> Self {
        let n_rows = rows.len();
        let n_features = rows.first().map_or(0, Vec::len);
        let max_bins = max_bins.clamp(2, MAX_BINS);
        let (bins, cuts) = (0..n_features)
            .into_par_iter()
            .map(|f| {
                let col: Vec<f64> = rows.iter().map(|r| r[f]).collect();
                let cuts = cut_points(&col, max_bins);
                let bins = col
                    .iter()
                    .map(|&x| cuts.partition_point(|&c| c < x) as u8)
                    .collect();
                (bins, cuts)
            })
            .unzip();
        BinnedMatrix { n_rows, bins, cuts }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.bins.len()
    }
}

fn cut_points(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq = sorted.clone();
    uniq.dedup();
    if uniq.len() <= max_bins {
        uniq.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0).collect()
    } else {
        let n = sorted.len();
        let mut cuts: Vec<f64> = (1..max_bins).map(|q| sorted[q * n / max_bins - 1]).collect();
        cuts.dedup();
        // the last cut must leave something on its right
        while cuts.last().is_some_and(|&c| c >= *uniq.last().unwrap()) {
            cuts.pop();
        }
        cuts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitRule {
    /// Exhaustive search over bin boundaries.
    Best,
    /// One uniformly drawn boundary per candidate feature (extra-trees).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Fraction of features considered at each node.
    pub max_features: f64,
    pub split: SplitRule,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: 1.0,
            split: SplitRule::Best,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Fits on the rows listed in `rows` (repeats allowed, for bootstrap
    /// samples). Also returns the fitted value for every listed row, in order.
    pub fn fit(
        x: &BinnedMatrix,
        y: &[f64],
        rows: &[usize],
        params: &TreeParams,
        rng: &mut ChaCha8Rng,
    ) -> (RegressionTree, Vec<f64>) {
        let mut builder = Builder {
            x,
            y,
            params,
            rng,
            nodes: Vec::new(),
            fitted: vec![0.0; rows.len()],
            count: vec![0; MAX_BINS],
            sum: vec![0.0; MAX_BINS],
        };
        let mut work: Vec<(usize, usize)> = rows.iter().copied().enumerate().collect();
        builder.grow(&mut work, 0);
        let fitted = builder.fitted;
        (RegressionTree { nodes: builder.nodes }, fitted)
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf(v) => return v,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    #[cfg(test)]
    fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf(_))).count()
    }
}

struct Builder<'a> {
    x: &'a BinnedMatrix,
    y: &'a [f64],
    params: &'a TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<TreeNode>,
    fitted: Vec<f64>,
    count: Vec<usize>,
    sum: Vec<f64>,
}

struct Candidate {
    feature: usize,
    bin: usize,
    score: f64,
}

impl Builder<'_> {
    /// `work` holds (position in the caller's row list, row index).
    fn grow(&mut self, work: &mut [(usize, usize)], depth: usize) -> u32 {
        let id = self.nodes.len() as u32;
        let n = work.len();
        let total: f64 = work.iter().map(|&(_, r)| self.y[r]).sum();
        let first = self.y[work[0].1];
        let pure = work.iter().all(|&(_, r)| self.y[r] == first);
        let mean = if pure { first } else { total / n as f64 };
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        let split = if pure || depth_capped || n < 2 * self.params.min_samples_leaf.max(1) {
            None
        } else {
            self.best_split(work, total)
        };

        let Some(c) = split else {
            for &(pos, _) in work.iter() {
                self.fitted[pos] = mean;
            }
            self.nodes.push(TreeNode::Leaf(mean));
            return id;
        };

        let bins = &self.x.bins[c.feature];
        let mut mid = 0;
        for i in 0..n {
            if (bins[work[i].1] as usize) <= c.bin {
                work.swap(i, mid);
                mid += 1;
            }
        }
        self.nodes.push(TreeNode::Leaf(mean));
        let (l, r) = work.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id as usize] = TreeNode::Split {
            feature: c.feature as u32,
            threshold: self.x.cuts[c.feature][c.bin],
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, work: &[(usize, usize)], total: f64) -> Option<Candidate> {
        let n_features = self.x.n_features();
        let n = work.len();
        if n_features == 0 {
            return None;
        }
        let k = ((self.params.max_features * n_features as f64).ceil() as usize).clamp(1, n_features);
        let mut features: Vec<usize> = if k == n_features {
            (0..n_features).collect()
        } else {
            sample(self.rng, n_features, k).into_vec()
        };
        features.sort_unstable();

        let min_leaf = self.params.min_samples_leaf.max(1);
        let parent = total * total / n as f64;
        let mut best: Option<Candidate> = None;
        for f in features {
            let bins = &self.x.bins[f];
            let (mut lo, mut hi) = (usize::MAX, 0usize);
            for &(_, r) in work {
                let b = bins[r] as usize;
                if self.count[b] == 0 {
                    lo = lo.min(b);
                    hi = hi.max(b);
                }
                self.count[b] += 1;
                self.sum[b] += self.y[r];
            }
            if lo < hi {
                let chosen = match self.params.split {
                    SplitRule::Best => lo..hi,
                    SplitRule::Random => {
                        let b = self.rng.gen_range(lo..hi);
                        b..b + 1
                    }
                };
                let (mut nl, mut sl) = (0usize, 0.0);
                for b in lo..chosen.end {
                    nl += self.count[b];
                    sl += self.sum[b];
                    if b < chosen.start || nl < min_leaf || n - nl < min_leaf {
                        continue;
                    }
                    let sr = total - sl;
                    let score = sl * sl / nl as f64 + sr * sr / (n - nl) as f64;
                    if score > parent * (1.0 + 1e-12) + 1e-12
                        && best.as_ref().is_none_or(|c| score > c.score)
                    {
                        best = Some(Candidate { feature: f, bin: b, score });
                    }
                }
            }
            for b in lo..=hi {
                self.count[b] = 0;
                self.sum[b] = 0.0;
            }
        }
        best
    }
}

/// Averaging ensemble (random forest or extra-trees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<RegressionTree>,
}

impl Forest {
    pub fn fit(
        x: &BinnedMatrix,
        y: &[f64],
        n_trees: usize,
        bootstrap: bool,
        params: &TreeParams,
        seed: u64,
    ) -> Forest {
        let n = x.n_rows();
        let trees = (0..n_trees.max(1))
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t as u64));
                let rows: Vec<usize> = if bootstrap {
                    (0..n).map(|_| rng.gen_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                RegressionTree::fit(x, y, &rows, params, &mut rng).0
            })
            .collect();
        Forest { trees }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

}

/// Least-squares gradient boosting. Predictions are clamped to the training
/// target range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
    lo: f64,
    hi: f64,
}

impl Boosted {
    pub fn fit(
        x: &BinnedMatrix,
        y: &[f64],
        rounds: usize,
        learning_rate: f64,
        params: &TreeParams,
        seed: u64,
    ) -> Boosted {
        let n = x.n_rows();
        let base = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base; n];
        let rows: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trees = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            let residual: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            if residual.iter().all(|r| r.abs() < 1e-12) {
                break;
            }
            let (tree, fitted) = RegressionTree::fit(x, &residual, &rows, params, &mut rng);
            for (p, f) in pred.iter_mut().zip(&fitted) {
                *p += learning_rate * f;
            }
            trees.push(tree);
        }
        let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Boosted {
            base,
            learning_rate,
            trees,
            lo,
            hi,
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let raw = self.base
            + self.learning_rate * self.trees.iter().map(|t| t.predict(row)).sum::<f64>();
        raw.clamp(self.lo, self.hi)
    }
}
