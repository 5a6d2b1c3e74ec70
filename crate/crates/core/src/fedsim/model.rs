//! Small fully connected classifiers with hand-written backpropagation.
//!
//! Architectures are named `linear` (multinomial logistic regression),
//! `logistic` (same model, alternative name) and `mlp-H[-H...]` (tanh hidden
//! layers of the given widths). Parameters are stored flat, layer by layer,
//! each layer as a row-major `out × in` weight matrix followed by `out`
//! biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::Dataset;
use super::FedError;

/// Parses an architecture name into its hidden layer widths.
pub fn hidden_layers(arch: &str) -> Result<Vec<usize>, FedError> {
    let arch = arch.trim();
    match arch {
        "linear" | "logistic" => Ok(Vec::new()),
        _ => {
            let widths = arch
                .strip_prefix("mlp-")
                .ok_or_else(|| FedError::UnknownArch(arch.to_string()))?;
            widths
                .split('-')
                .map(|w| match w.parse::<usize>() {
                    Ok(n) if n > 0 => Ok(n),
                    _ => Err(FedError::UnknownArch(arch.to_string())),
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub arch: String,
    /// Input width, hidden widths, number of classes.
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<f64>,
}

fn count_for(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        self.weights.len()
    }

    /// Size on the wire, 32-bit floats.
    pub fn bytes(&self) -> u64 {
        4 * self.param_count() as u64
    }

    pub fn same_architecture(&self, other: &ModelParams) -> bool {
        self.layer_sizes == other.layer_sizes && self.weights.len() == other.weights.len()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, fan_in, fan_out)
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let at = offset;
            offset += w[0] * w[1] + w[1];
            (at, w[0], w[1])
        })
    }

    /// Class scores for one input.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut act = x.to_vec();
        let n_layers = self.layer_sizes.len() - 1;
        for (i, (at, fan_in, fan_out)) in self.layers().enumerate() {
            let (w, b) = self.weights[at..at + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let mut next: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], &act))
                .collect();
            if i + 1 < n_layers {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            act = next;
        }
        act
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.x(i)) == data.y(i))
            .count();
        correct as f64 / data.len() as f64
    }

    /// Training cost estimate: forward plus backward is about six FLOPs per
    /// parameter per sample.
    pub fn train_flops(&self, samples: usize, epochs: usize) -> u64 {
        6 * self.param_count() as u64 * samples as u64 * epochs as u64
    }
}

pub fn init_model(arch: &str, input_dim: usize, classes: usize, seed: u64) -> Result<ModelParams, FedError> {
    let mut layer_sizes = vec![input_dim];
    layer_sizes.extend(hidden_layers(arch)?);
    layer_sizes.push(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(count_for(&layer_sizes));
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        weights.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
        weights.extend(std::iter::repeat_n(0.0, fan_out));
    }
    Ok(ModelParams {
        arch: arch.trim().to_string(),
        layer_sizes,
        weights,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - log_sum).collect()
}

/// Mean cross-entropy over a batch.
pub fn loss(model: &ModelParams, xs: &[&[f64]], ys: &[usize]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| -log_softmax(&model.logits(x))[y])
        .sum();
    total / xs.len() as f64
}

/// Mean cross-entropy over a batch and its gradient.
pub fn loss_and_grad(model: &ModelParams, xs: &[&[f64]], ys: &[usize]) -> (f64, Vec<f64>) {
    let layers: Vec<_> = model.layers().collect();
    let mut grad = vec![0.0; model.weights.len()];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        // Forward, keeping each layer's input.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut act = x.to_vec();
        for (i, &(at, fan_in, fan_out)) in layers.iter().enumerate() {
            let (w, b) = model.weights[at..at + fan_in * fan_out + fan_out].split_at(fan_in * fan_out);
            let mut next: Vec<f64> = (0..fan_out)
                .map(|o| b[o] + dot(&w[o * fan_in..(o + 1) * fan_in], &act))
                .collect();
            if i + 1 < layers.len() {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut act, next));
        }
        let log_p = log_softmax(&act);
        total -= log_p[y];
        // dL/dz for the output layer: softmax - onehot.
        let mut delta: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
        delta[y] -= 1.0;
        for (i, &(at, fan_in, fan_out)) in layers.iter().enumerate().rev() {
            let input = &inputs[i];
            for o in 0..fan_out {
                let row = at + o * fan_in;
                for (g, &a) in grad[row..row + fan_in].iter_mut().zip(input) {
                    *g += delta[o] * a;
                }
                grad[at + fan_in * fan_out + o] += delta[o];
            }
            if i > 0 {
                // Input of this layer is tanh output of the previous one.
                delta = (0..fan_in)
                    .map(|j| {
                        let back: f64 = (0..fan_out)
                            .map(|o| model.weights[at + o * fan_in + j] * delta[o])
                            .sum();
                        back * (1.0 - input[j] * input[j])
                    })
                    .collect();
            }
        }
    }
    let n = xs.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_weights() {
        let a = init_model("mlp-16", 8, 4, 3).unwrap();
        let b = init_model("mlp-16", 8, 4, 3).unwrap();
        assert_eq!(
            a.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>(),
            b.weights.iter().map(|w| w.to_bits()).collect::<Vec<_>>()
        );
        assert_ne!(a.weights, init_model("mlp-16", 8, 4, 4).unwrap().weights);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(init_model("linear", 10, 3, 0).unwrap().param_count(), 10 * 3 + 3);
        assert_eq!(init_model("logistic", 10, 3, 0).unwrap().param_count(), 33);
        // 8->16: 128 + 16, 16->4: 64 + 4
        assert_eq!(init_model("mlp-16", 8, 4, 0).unwrap().param_count(), 212);
        // 8->16: 144, 16->8: 136, 8->4: 36
        let deep = init_model("mlp-16-8", 8, 4, 0).unwrap();
        assert_eq!(deep.param_count(), 316);
        assert_eq!(deep.bytes(), 4 * 316);
        assert_eq!(deep.layer_sizes, vec![8, 16, 8, 4]);
    }

    #[test]
    fn unknown_arch() {
        for arch in ["resnet18", "mlp-", "mlp-0", "mlp-x"] {
            assert!(matches!(init_model(arch, 4, 2, 0), Err(FedError::UnknownArch(_))), "{arch}");
        }
    }

    #[test]
    fn uniform_logits_give_log_c_loss() {
        let mut m = init_model("linear", 3, 4, 0).unwrap();
        m.weights.iter_mut().for_each(|w| *w = 0.0);
        let x = [1.0, -2.0, 0.5];
        let l = loss(&m, &[&x], &[2]);
        assert!((l - 4f64.ln()).abs() < 1e-12);
    }
}
