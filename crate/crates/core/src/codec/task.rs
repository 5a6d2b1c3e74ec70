//! Synthetic classification task used to measure codec rate and task loss.
//!
//! Features are i.i.d. standard normal in `dim` dimensions. The binary label
//! is `w · x + noise > 0`, where `w` is nonzero on `relevant_dims` randomly
//! placed coordinates with magnitudes in `[1, 2)` and random signs. The
//! server-side predictor applies the same linear rule to the reconstructed
//! features, so any coordinate outside the support of `w` is pure overhead
//! on the link.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub dim: usize,
    pub relevant_dims: usize,
    pub noise_std: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            dim: 64,
            relevant_dims: 8,
            noise_std: 0.5,
            train_samples: 2000,
            test_samples: 2000,
            seed: 7,
        }
    }
}

/// A generated instance of [`SyntheticTask`].
#[derive(Debug, Clone)]
pub struct TaskData {
    pub weights: Vec<f64>,
    pub support: Vec<usize>,
    pub train: Vec<Vec<f64>>,
    pub train_labels: Vec<bool>,
    pub test: Vec<Vec<f64>>,
    pub test_labels: Vec<bool>,
}

impl SyntheticTask {
    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        let bad = |f: &str, r: &str| Err((f.to_string(), r.to_string()));
        if self.dim == 0 {
            return bad("dim", "must be > 0");
        }
        if self.relevant_dims == 0 || self.relevant_dims > self.dim {
            return bad("relevant_dims", "must be in 1..=dim");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std", "must be >= 0");
        }
        if self.train_samples < 2 || self.test_samples == 0 {
            return bad("train_samples", "need >= 2 training and >= 1 test samples");
        }
        Ok(())
    }

    pub fn generate(&self) -> TaskData {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut dims: Vec<usize> = (0..self.dim).collect();
        dims.shuffle(&mut rng);
        let mut support = dims[..self.relevant_dims].to_vec();
        support.sort_unstable();
        let mut weights = vec![0.0; self.dim];
        for &d in &support {
            let magnitude = rng.random_range(1.0..2.0);
            weights[d] = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        }
        let noise = Normal::new(0.0, self.noise_std).expect("noise_std validated");
        let sample = |n: usize, rng: &mut ChaCha8Rng| {
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(rng)).collect();
                let score = linear_score(&weights, &support, &x) + noise.sample(rng);
                xs.push(x);
                ys.push(score > 0.0);
            }
            (xs, ys)
        };
        let (train, train_labels) = sample(self.train_samples, &mut rng);
        let (test, test_labels) = sample(self.test_samples, &mut rng);
        TaskData {
            weights,
            support,
            train,
            train_labels,
            test,
            test_labels,
        }
    }
}

pub(crate) fn linear_score(weights: &[f64], support: &[usize], x: &[f64]) -> f64 {
    support.iter().map(|&d| weights[d] * x[d]).sum()
}

impl TaskData {
    /// Per-dimension relevance: absolute Pearson correlation between the
    /// feature and the label on the training split.
    pub fn relevance(&self) -> Vec<f64> {
        let n = self.train.len() as f64;
        let ys: Vec<f64> = self.train_labels.iter().map(|&y| if y { 1.0 } else { 0.0 }).collect();
        let y_mean = ys.iter().sum::<f64>() / n;
        let y_var = ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>();
        let dim = self.weights.len();
        (0..dim)
            .map(|d| {
                let x_mean = self.train.iter().map(|x| x[d]).sum::<f64>() / n;
                let (mut cov, mut x_var) = (0.0, 0.0);
                for (x, y) in self.train.iter().zip(&ys) {
                    let dx = x[d] - x_mean;
                    cov += dx * (y - y_mean);
                    x_var += dx * dx;
                }
                let denom = (x_var * y_var).sqrt();
                if denom > 0.0 {
                    (cov / denom).abs()
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn predict(&self, reconstructed: &[f64]) -> bool {
        linear_score(&self.weights, &self.support, reconstructed) > 0.0
    }
}
