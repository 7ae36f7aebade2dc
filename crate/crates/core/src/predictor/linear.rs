//! Scale-sensitive zoo members: ridge regression and inverse-distance kNN.
//! Both see features through a [`Standardizer`] fitted on the training rows.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Z-scoring, optionally after a signed `ln(1 + |x|)`. Counts such as FLOPs
/// span many orders of magnitude, so log space is usually the better fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    log: bool,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn slog(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>], log: bool) -> Self {
        let slog = |x: f64| if log { slog(x) } else { x };
        let p = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; p];
        for r in rows {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += slog(x) / n;
            }
        }
        let mut var = vec![0.0; p];
        for r in rows {
            for ((v, &x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (slog(x) - m).powi(2) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { log, mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&x, (m, s))| (if self.log { slog(x) } else { x } - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    scaler: Standardizer,
    intercept: f64,
    weights: Vec<f64>,
}

impl Ridge {
    /// Closed-form ridge with an unpenalised intercept.
    pub fn fit(rows: &[Vec<f64>], y: &[f64], lambda: f64, log_features: bool) -> Ridge {
        let scaler = Standardizer::fit(rows, log_features);
        let n = rows.len();
        let p = scaler.mean.len();
        let intercept = y.iter().sum::<f64>() / n as f64;
        let mut x = DMatrix::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in scaler.apply(r).into_iter().enumerate() {
                x[(i, j)] = v;
            }
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - intercept));
        let mut gram = x.transpose() * &x;
        for j in 0..p {
            gram[(j, j)] += lambda.max(1e-12);
        }
        let rhs = x.transpose() * yc;
        let weights = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(p)),
        };
        Ridge {
            scaler,
            intercept,
            weights: weights.iter().copied().collect(),
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .scaler
                .apply(row)
                .iter()
                .zip(&self.weights)
                .map(|(x, w)| x * w)
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    k: usize,
    scaler: Standardizer,
    rows: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Knn {
    pub fn fit(rows: &[Vec<f64>], y: &[f64], k: usize, log_features: bool) -> Knn {
        let scaler = Standardizer::fit(rows, log_features);
        Knn {
            k: k.max(1),
            rows: rows.iter().map(|r| scaler.apply(r)).collect(),
            scaler,
            targets: y.to_vec(),
        }
    }

    /// Inverse-distance weighted mean of the `k` nearest targets. Exact
    /// matches take the plain mean of the matching targets.
    pub fn predict(&self, row: &[f64]) -> f64 {
        let q = self.scaler.apply(row);
        let mut dist: Vec<(f64, usize)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let k = self.k.min(dist.len());
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() {
            dist.select_nth_unstable_by(k - 1, by_dist);
            dist.truncate(k);
        }
        dist.sort_by(by_dist);

        let exact: Vec<f64> = dist
            .iter()
            .filter(|(d, _)| *d == 0.0)
            .map(|&(_, i)| self.targets[i])
            .collect();
        if !exact.is_empty() {
            return exact.iter().sum::<f64>() / exact.len() as f64;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (d, i) in dist {
            let w = 1.0 / d.sqrt();
            num += w * self.targets[i];
            den += w;
        }
        num / den
    }
}
