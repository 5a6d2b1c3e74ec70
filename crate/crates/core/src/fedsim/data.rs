//! Gaussian-mixture classification data and IID partitioning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Row-major samples with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Self {
        assert_eq!(features.len(), dim * labels.len(), "features must be n x dim");
        assert!(labels.iter().all(|&y| y < classes), "label out of range");
        Dataset {
            dim,
            classes,
            features,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.x(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(self.dim, self.classes, features, labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederatedData {
    pub train: Dataset,
    pub test: Dataset,
}

impl FederatedData {
    /// One-line description given to the advisor.
    pub fn describe(&self) -> String {
        format!(
            "{} training samples and {} test samples, each a {}-dimensional real vector, {} classes",
            self.train.len(),
            self.test.len(),
            self.train.dim(),
            self.train.classes()
        )
    }
}

/// Mixture of isotropic Gaussians; each class owns several components, so a
/// linear model cannot separate the classes perfectly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub dim: usize,
    pub classes: usize,
    pub components_per_class: usize,
    /// Standard deviation of component means around the origin.
    pub separation: f64,
    /// Standard deviation of samples around their component mean.
    pub spread: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            dim: 8,
            classes: 4,
            components_per_class: 3,
            separation: 2.0,
            spread: 1.0,
            train_samples: 3000,
            test_samples: 1000,
            seed: 11,
        }
    }
}

impl DataSpec {
    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        let bad = |f: &str, r: &str| Err((f.to_string(), r.to_string()));
        if self.dim == 0 {
            return bad("dim", "must be > 0");
        }
        if self.classes < 2 {
            return bad("classes", "must be >= 2");
        }
        if self.components_per_class == 0 {
            return bad("components_per_class", "must be > 0");
        }
        if !(self.separation >= 0.0 && self.spread > 0.0) {
            return bad("spread", "separation must be >= 0 and spread > 0");
        }
        if self.train_samples == 0 || self.test_samples == 0 {
            return bad("train_samples", "need at least one training and one test sample");
        }
        Ok(())
    }

    pub fn generate(&self) -> FederatedData {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n_components = self.classes * self.components_per_class;
        let means: Vec<Vec<f64>> = (0..n_components)
            .map(|_| {
                (0..self.dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        self.separation * z
                    })
                    .collect()
            })
            .collect();
        let noise = Normal::new(0.0, self.spread).expect("spread validated");
        let draw = |n: usize, rng: &mut ChaCha8Rng| {
            let mut features = Vec::with_capacity(n * self.dim);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let c = rng.random_range(0..n_components);
                features.extend(means[c].iter().map(|m| m + noise.sample(rng)));
                labels.push(c % self.classes);
            }
            Dataset::new(self.dim, self.classes, features, labels)
        };
        let train = draw(self.train_samples, &mut rng);
        let test = draw(self.test_samples, &mut rng);
        FederatedData { train, test }
    }
}

/// Random IID split into `n` shards whose sizes differ by at most one. Each
/// shard keeps its samples in their original order, so a single shard is
/// the whole dataset unchanged.
pub fn partition_iid(data: &Dataset, n: usize, seed: u64) -> Vec<Dataset> {
    assert!(n >= 1, "need at least one shard");
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let base = data.len() / n;
    let extra = data.len() % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let mut idx = order[start..start + size].to_vec();
            start += size;
            idx.sort_unstable();
            data.subset(&idx)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_the_data_once() {
        let data = DataSpec {
            train_samples: 103,
            ..DataSpec::default()
        }
        .generate();
        let shards = partition_iid(&data.train, 10, 5);
        let sizes: Vec<_> = shards.iter().map(Dataset::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        assert!(sizes.iter().all(|&s| s == 10 || s == 11));
        let mut rows: Vec<Vec<u64>> = shards
            .iter()
            .flat_map(|s| (0..s.len()).map(|i| s.x(i).iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>())
            .collect();
        let mut all: Vec<Vec<u64>> = (0..data.train.len())
            .map(|i| data.train.x(i).iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        all.sort();
        assert_eq!(rows, all);
    }

    #[test]
    fn single_shard_is_identity() {
        let data = DataSpec::default().generate();
        assert_eq!(partition_iid(&data.train, 1, 99), vec![data.train.clone()]);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(DataSpec::default().generate(), DataSpec::default().generate());
    }
}
