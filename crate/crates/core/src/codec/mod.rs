//! Task-oriented feature coding: relevance selection, uniform quantization,
//! arithmetic coding, and the Lagrangian sweep over codec configurations.

pub mod arith;
mod task;

use serde::Serialize;

pub use arith::{compress, decompress, CoderError, FrequencyModel};
pub use task::{SyntheticTask, TaskData};

/// A vector of finite activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Returns `None` if any value is not finite.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        values.iter().all(|v| v.is_finite()).then_some(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CodecConfig {
    pub kept_dims: usize,
    pub n_bins: u32,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("invalid codec config: {0}")]
    InvalidConfig(String),
    #[error("entropy of an empty symbol list")]
    EmptyInput,
}

impl CodecConfig {
    pub fn new(kept_dims: usize, n_bins: u32, clip_lo: f64, clip_hi: f64) -> Result<Self, CodecError> {
        let cfg = CodecConfig {
            kept_dims,
            n_bins,
            clip_lo,
            clip_hi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.kept_dims == 0 {
            return Err(CodecError::InvalidConfig("kept_dims must be >= 1".into()));
        }
        if self.n_bins < 2 {
            return Err(CodecError::InvalidConfig("n_bins must be >= 2".into()));
        }
        if !(self.clip_lo < self.clip_hi && self.clip_lo.is_finite() && self.clip_hi.is_finite()) {
            return Err(CodecError::InvalidConfig("clip range needs lo < hi".into()));
        }
        Ok(())
    }

    pub fn cell_width(&self) -> f64 {
        (self.clip_hi - self.clip_lo) / f64::from(self.n_bins)
    }

    fn quantize_value(&self, v: f64) -> u32 {
        let clipped = v.clamp(self.clip_lo, self.clip_hi);
        let cell = ((clipped - self.clip_lo) / self.cell_width()).floor();
        (cell.max(0.0) as u32).min(self.n_bins - 1)
    }

    fn center(&self, symbol: u32) -> f64 {
        self.clip_lo + (f64::from(symbol) + 0.5) * self.cell_width()
    }
}

/// Uniform mid-rise quantizer: clip to the range, then index `n_bins`
/// equal cells.
pub fn quantize(v: &FeatureVector, cfg: &CodecConfig) -> Vec<u32> {
    v.values().iter().map(|&x| cfg.quantize_value(x)).collect()
}

/// Cell centers for each symbol.
pub fn dequantize(symbols: &[u32], cfg: &CodecConfig) -> FeatureVector {
    FeatureVector(symbols.iter().map(|&s| cfg.center(s)).collect())
}

/// Plug-in Shannon entropy of the observed symbol frequencies, bits/symbol.
pub fn empirical_entropy(symbols: &[u32]) -> Result<f64, CodecError> {
    if symbols.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let mut counts = std::collections::BTreeMap::new();
    for &s in symbols {
        *counts.entry(s).or_insert(0usize) += 1;
    }
    let n = symbols.len() as f64;
    Ok(counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0))
}

pub fn entropy_encode(symbols: &[u32], model: &FrequencyModel) -> Result<Vec<u8>, CoderError> {
    arith::encode(symbols, model)
}

pub fn entropy_decode(payload: &[u8], model: &FrequencyModel, n: usize) -> Vec<u32> {
    arith::decode(payload, model, n)
}

/// Indices of the `k` highest relevance scores in ascending index order,
/// with their values. Ties go to the smaller index.
pub fn select_relevant(v: &FeatureVector, relevance: &[f64], k: usize) -> (Vec<usize>, Vec<f64>) {
    assert_eq!(relevance.len(), v.dim(), "one relevance score per dimension");
    let indices = top_k(relevance, k);
    let values = indices.iter().map(|&i| v.values()[i]).collect();
    (indices, values)
}

fn top_k(relevance: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..relevance.len()).collect();
    order.sort_by(|&a, &b| relevance[b].total_cmp(&relevance[a]).then(a.cmp(&b)));
    order.truncate(k.min(relevance.len()));
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub config: CodecConfig,
    /// Payload bits per held-out example.
    pub rate_bits: f64,
    /// Held-out error rate after reconstruct-and-predict.
    pub task_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub beta: f64,
    pub rate_bits: f64,
    pub task_loss: f64,
    pub config: CodecConfig,
}

/// Measures rate and task loss of one configuration.
///
/// The frequency model is fitted on the quantized training features (with
/// add-one smoothing over all `n_bins` symbols) and shared by encoder and
/// decoder, so it is not charged to the rate.
pub fn evaluate_config(data: &TaskData, relevance: &[f64], cfg: &CodecConfig) -> GridPoint {
    let kept = top_k(relevance, cfg.kept_dims);
    let symbols_of = |x: &Vec<f64>| -> Vec<u32> { kept.iter().map(|&d| cfg.quantize_value(x[d])).collect() };
    let train_symbols: Vec<u32> = data.train.iter().flat_map(symbols_of).collect();
    let model = FrequencyModel::from_symbols(&train_symbols, cfg.n_bins as usize);
    let test_symbols: Vec<u32> = data.test.iter().flat_map(symbols_of).collect();
    let payload = entropy_encode(&test_symbols, &model).expect("smoothed model covers all bins");
    let decoded = entropy_decode(&payload, &model, test_symbols.len());
    debug_assert_eq!(decoded, test_symbols);

    let dim = data.weights.len();
    let mut errors = 0usize;
    for (chunk, &label) in decoded.chunks(kept.len()).zip(&data.test_labels) {
        let mut x = vec![0.0; dim];
        for (&d, &s) in kept.iter().zip(chunk) {
            x[d] = cfg.center(s);
        }
        if data.predict(&x) != label {
            errors += 1;
        }
    }
    let n = data.test.len() as f64;
    GridPoint {
        config: *cfg,
        rate_bits: (payload.len() * 8) as f64 / n,
        task_loss: errors as f64 / n,
    }
}

pub fn evaluate_grid(task: &SyntheticTask, grid: &[CodecConfig]) -> Vec<GridPoint> {
    let data = task.generate();
    let relevance = data.relevance();
    grid.iter().map(|cfg| evaluate_config(&data, &relevance, cfg)).collect()
}

/// Index minimizing `task_loss + beta * rate_bits`; ties go to the lower
/// rate, then to the earlier grid entry.
pub fn select_for_beta(points: &[GridPoint], beta: f64) -> usize {
    let objective = |p: &GridPoint| p.task_loss + beta * p.rate_bits;
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        let (o, ob) = (objective(p), objective(b));
        if o < ob || (o == ob && p.rate_bits < b.rate_bits) {
            best = i;
        }
    }
    best
}

/// For each beta, the grid configuration minimizing the weighted sum of
/// task loss and rate.
pub fn tradeoff_sweep(task: &SyntheticTask, betas: &[f64], grid: &[CodecConfig]) -> Vec<TradeoffPoint> {
    assert!(!grid.is_empty(), "grid must be non-empty");
    let points = evaluate_grid(task, grid);
    sweep_points(&points, betas)
}

pub fn sweep_points(points: &[GridPoint], betas: &[f64]) -> Vec<TradeoffPoint> {
    betas
        .iter()
        .map(|&beta| {
            let p = points[select_for_beta(points, beta)];
            TradeoffPoint {
                beta,
                rate_bits: p.rate_bits,
                task_loss: p.task_loss,
                config: p.config,
            }
        })
        .collect()
}

/// Cartesian grid of kept dimensions and bin counts over one clip range.
pub fn grid(kept: &[usize], bins: &[u32], clip: (f64, f64)) -> Result<Vec<CodecConfig>, CodecError> {
    let mut out = Vec::with_capacity(kept.len() * bins.len());
    for &k in kept {
        for &b in bins {
            out.push(CodecConfig::new(k, b, clip.0, clip.1)?);
        }
    }
    if out.is_empty() {
        return Err(CodecError::InvalidConfig("empty grid".into()));
    }
    Ok(out)
}

/// Parses `k=1,8,64;bins=2,4,8;clip=-3:3`. Missing parts fall back to the
/// default grid values.
pub fn parse_grid_spec(spec: &str) -> Result<Vec<CodecConfig>, CodecError> {
    let bad = |m: String| CodecError::InvalidConfig(m);
    let mut kept = DEFAULT_KEPT.to_vec();
    let mut bins = DEFAULT_BINS.to_vec();
    let mut clip = DEFAULT_CLIP;
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part.split_once('=').ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
        match key.trim() {
            "k" | "kept" | "kept_dims" => {
                kept = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad(format!("bad kept_dims {v:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            "bins" | "n_bins" => {
                bins = value
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| bad(format!("bad n_bins {v:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            "clip" => {
                let (lo, hi) = value.split_once(':').ok_or_else(|| bad("clip must be lo:hi".into()))?;
                clip = (
                    lo.trim().parse().map_err(|_| bad(format!("bad clip {lo:?}")))?,
                    hi.trim().parse().map_err(|_| bad(format!("bad clip {hi:?}")))?,
                );
            }
            other => return Err(bad(format!("unknown grid key {other:?}"))),
        }
    }
    grid(&kept, &bins, clip)
}

pub const DEFAULT_KEPT: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
pub const DEFAULT_BINS: [u32; 5] = [2, 4, 8, 16, 32];
pub const DEFAULT_CLIP: (f64, f64) = (-3.0, 3.0);

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bins: u32) -> CodecConfig {
        CodecConfig::new(1, bins, -1.0, 1.0).unwrap()
    }

    #[test]
    fn hand_evaluated_quantizer() {
        // width 0.5: cells [-1,-.5) [-.5,0) [0,.5) [.5,1]
        let v = FeatureVector::new(vec![-1.0, 0.0, 0.9]).unwrap();
        let q = quantize(&v, &cfg(4));
        assert_eq!(q, vec![0, 2, 3]);
        assert_eq!(dequantize(&q, &cfg(4)).values(), &[-0.75, 0.25, 0.75]);
    }

    #[test]
    fn centers_are_fixed_points_and_clipping() {
        let c = cfg(8);
        let centers: Vec<f64> = (0..8).map(|s| c.center(s)).collect();
        let v = FeatureVector::new(centers.clone()).unwrap();
        assert_eq!(dequantize(&quantize(&v, &c), &c).values(), centers.as_slice());
        let out = FeatureVector::new(vec![-5.0, 5.0, 1.0]).unwrap();
        assert_eq!(quantize(&out, &c), vec![0, 7, 7]);
    }

    #[test]
    fn invalid_configs() {
        assert!(CodecConfig::new(0, 4, -1.0, 1.0).is_err());
        assert!(CodecConfig::new(1, 1, -1.0, 1.0).is_err());
        assert!(CodecConfig::new(1, 4, 1.0, 1.0).is_err());
        assert!(FeatureVector::new(vec![f64::NAN]).is_none());
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(empirical_entropy(&[3, 3, 3]).unwrap(), 0.0);
        assert_eq!(empirical_entropy(&[0, 1, 2, 3]).unwrap(), 2.0);
        let h = empirical_entropy(&[0, 0, 0, 1]).unwrap();
        assert!((h - 0.811_278_124_459_132_8).abs() < 1e-12);
        assert_eq!(empirical_entropy(&[]), Err(CodecError::EmptyInput));
    }

    #[test]
    fn selection_examples() {
        let v = FeatureVector::new((0..10).map(f64::from).collect()).unwrap();
        let rel = vec![0.5; 10];
        assert_eq!(select_relevant(&v, &rel, 10).0, (0..10).collect::<Vec<_>>());
        let mut one_hot = vec![0.0; 10];
        one_hot[5] = 1.0;
        assert_eq!(select_relevant(&v, &one_hot, 1), (vec![5], vec![5.0]));
        // ties go to the smaller index
        assert_eq!(select_relevant(&v, &rel, 3).0, vec![0, 1, 2]);
    }

    #[test]
    fn beta_zero_picks_min_loss_then_min_rate() {
        let c = cfg(4);
        let p = |rate, loss| GridPoint { config: c, rate_bits: rate, task_loss: loss };
        let points = [p(10.0, 0.2), p(8.0, 0.1), p(4.0, 0.1), p(1.0, 0.4)];
        assert_eq!(select_for_beta(&points, 0.0), 2);
        assert_eq!(select_for_beta(&points, 10.0), 3);
    }

    #[test]
    fn relevance_finds_the_support() {
        let data = SyntheticTask::default().generate();
        let rel = data.relevance();
        assert_eq!(top_k(&rel, 8), data.support);
    }

    #[test]
    fn grid_spec() {
        let g = parse_grid_spec("k=8,64;bins=4,16;clip=-2:2").unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g[1], CodecConfig::new(8, 16, -2.0, 2.0).unwrap());
        assert_eq!(parse_grid_spec("").unwrap().len(), 35);
        assert!(parse_grid_spec("bins=1").is_err());
        assert!(parse_grid_spec("depth=3").is_err());
    }
}
