//! Federated averaging over toy classifiers, a deterministic wall-clock
//! model, and the advisor-driven trial loop that tunes the training
//! configuration from accuracy-curve feedback.

mod data;
mod model;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use data::{partition_iid, DataSpec, Dataset, FederatedData};
pub use model::{hidden_layers, init_model, loss, loss_and_grad, ModelParams};

use crate::advisor::{Advisor, AdvisorError, ReplyBody, ReplyKind};
use crate::offload::{compute_time, transfer_time};
use crate::registry::Scenario;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FedError {
    #[error("unknown model architecture {0:?}")]
    UnknownArch(String),
    #[error("models do not share one architecture")]
    ArchMismatch,
    #[error("aggregation weights must be >= 0 with a positive sum")]
    InvalidWeights,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("advisor failed: {0}")]
    Advisor(AdvisorError),
}

// Compact text forms ("adam:0.9:0.999:1e-8", "step:0.1:10", "jitter:0.1")
// are used in files and CLI flags. Advisors may also send objects such as
// {"kind": "adam", "beta1": 0.9}.

fn parse_params<const N: usize>(kind: &str, rest: &[&str], defaults: [f64; N]) -> Result<[f64; N], String> {
    if rest.len() > N {
        return Err(format!("{kind} takes at most {N} parameters"));
    }
    let mut out = defaults;
    for (slot, text) in out.iter_mut().zip(rest) {
        *slot = text
            .trim()
            .parse()
            .map_err(|_| format!("bad {kind} parameter {text:?}"))?;
    }
    Ok(out)
}

fn compact_from_object(value: serde_json::Value, keys: fn(&str) -> &'static [&'static str]) -> Result<String, String> {
    let serde_json::Value::Object(map) = value else {
        return Err("expected a string or an object".into());
    };
    let kind = map
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or("object needs a \"kind\" field")?
        .to_string();
    let mut parts = vec![kind.clone()];
    for key in keys(&kind) {
        match map.get(*key) {
            Some(v) if v.is_number() => parts.push(v.to_string()),
            Some(_) => return Err(format!("{key} must be a number")),
            None => break,
        }
    }
    Ok(parts.join(":"))
}

macro_rules! compact_serde {
    ($ty:ty, $keys:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let value = serde_json::Value::deserialize(deserializer)?;
                let text = match value {
                    serde_json::Value::String(s) => s,
                    other => compact_from_object(other, $keys).map_err(serde::de::Error::custom)?,
                };
                text.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd,
    SgdMomentum { mu: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Optimizer::Sgd => f.write_str("sgd"),
            Optimizer::SgdMomentum { mu } => write!(f, "momentum:{mu}"),
            Optimizer::Adam { beta1, beta2, eps } => write!(f, "adam:{beta1}:{beta2}:{eps}"),
        }
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let kind = parts[0].trim().to_ascii_lowercase();
        match kind.as_str() {
            "sgd" if parts.len() == 1 => Ok(Optimizer::Sgd),
            "momentum" | "sgd_momentum" => {
                let [mu] = parse_params(&kind, &parts[1..], [0.9])?;
                Ok(Optimizer::SgdMomentum { mu })
            }
            "adam" => {
                let [beta1, beta2, eps] = parse_params(&kind, &parts[1..], [0.9, 0.999, 1e-8])?;
                Ok(Optimizer::Adam { beta1, beta2, eps })
            }
            _ => Err(format!("unknown optimizer {s:?}")),
        }
    }
}

compact_serde!(Optimizer, |kind| match kind {
    "momentum" | "sgd_momentum" => &["mu"],
    "adam" => &["beta1", "beta2", "eps"],
    _ => &[],
});

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `factor` every `every_rounds` global rounds.
    StepDecay { factor: f64, every_rounds: usize },
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::StepDecay { factor, every_rounds } => write!(f, "step:{factor}:{every_rounds}"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts[0].trim().to_ascii_lowercase().as_str() {
            "constant" if parts.len() == 1 => Ok(LrSchedule::Constant),
            "step" | "step_decay" => {
                let [factor, every] = parse_params("step", &parts[1..], [0.1, 10.0])?;
                if every < 1.0 || every.fract() != 0.0 {
                    return Err(format!("step interval must be a positive integer, got {every}"));
                }
                Ok(LrSchedule::StepDecay {
                    factor,
                    every_rounds: every as usize,
                })
            }
            _ => Err(format!("unknown learning-rate schedule {s:?}")),
        }
    }
}

compact_serde!(LrSchedule, |_| &["factor", "every_rounds"]);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    None,
    /// Add N(0, sigma²) noise to every feature of every training batch.
    GaussianJitter { sigma: f64 },
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Augmentation::None => f.write_str("none"),
            Augmentation::GaussianJitter { sigma } => write!(f, "jitter:{sigma}"),
        }
    }
}

impl FromStr for Augmentation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts[0].trim().to_ascii_lowercase().as_str() {
            "none" if parts.len() == 1 => Ok(Augmentation::None),
            "jitter" | "gaussian_jitter" => {
                let [sigma] = parse_params("jitter", &parts[1..], [0.1])?;
                Ok(Augmentation::GaussianJitter { sigma })
            }
            _ => Err(format!("unknown augmentation {s:?}")),
        }
    }
}

compact_serde!(Augmentation, |_| &["sigma"]);

/// How clients share the uplink when returning their models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UploadMode {
    /// One shared uplink; uploads go one after another.
    #[default]
    Sequential,
    /// Every client has its own uplink of the configured rate.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlConfig {
    pub n_clients: usize,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub global_rounds: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub lr_schedule: LrSchedule,
    pub augmentation: Augmentation,
    pub model_arch: String,
    #[serde(default)]
    pub upload_mode: UploadMode,
}

impl Default for FlConfig {
    fn default() -> Self {
        FlConfig {
            n_clients: 10,
            batch_size: 100,
            local_epochs: 10,
            global_rounds: 30,
            lr: 0.05,
            optimizer: Optimizer::Sgd,
            lr_schedule: LrSchedule::Constant,
            augmentation: Augmentation::None,
            model_arch: "mlp-32".into(),
            upload_mode: UploadMode::Sequential,
        }
    }
}

impl FlConfig {
    pub(crate) fn validate(&self) -> Result<(), (String, String)> {
        let bad = |f: &str, r: String| Err((f.to_string(), r));
        if self.n_clients == 0 {
            return bad("n_clients", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if self.local_epochs == 0 {
            return bad("local_epochs", "must be >= 1".into());
        }
        if self.global_rounds == 0 {
            return bad("global_rounds", "must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be > 0".into());
        }
        if let LrSchedule::StepDecay { factor, every_rounds } = self.lr_schedule {
            if !(factor > 0.0 && factor <= 1.0) || every_rounds == 0 {
                return bad("lr_schedule", "factor must be in (0, 1] and interval >= 1".into());
            }
        }
        if let Augmentation::GaussianJitter { sigma } = self.augmentation {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("augmentation", "sigma must be >= 0".into());
            }
        }
        match self.optimizer {
            Optimizer::SgdMomentum { mu } if !(0.0..1.0).contains(&mu) => {
                return bad("optimizer", "momentum must be in [0, 1)".into());
            }
            Optimizer::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                return bad("optimizer", "adam needs betas in [0, 1) and eps > 0".into());
            }
            _ => {}
        }
        hidden_layers(&self.model_arch).map_err(|e| ("model_arch".to_string(), e.to_string()))?;
        Ok(())
    }

    pub fn check(&self) -> Result<(), FedError> {
        self.validate()
            .map_err(|(field, reason)| FedError::InvalidConfig(format!("{field}: {reason}")))
    }

    /// Learning rate in effect during 0-based global round `round`.
    pub fn lr_at(&self, round: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::StepDecay { factor, every_rounds } => {
                self.lr * factor.powi((round / every_rounds) as i32)
            }
        }
    }

    /// Applies `key=value` overrides, comma separated.
    pub fn with_overrides(&self, spec: &str) -> Result<FlConfig, FedError> {
        let mut cfg = self.clone();
        let bad = |m: String| FedError::InvalidConfig(m);
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {part:?}")))?;
            let value = value.trim();
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{key}: bad integer {v:?}")));
            match key.trim() {
                "n_clients" => cfg.n_clients = int(value)?,
                "batch_size" => cfg.batch_size = int(value)?,
                "local_epochs" => cfg.local_epochs = int(value)?,
                "global_rounds" => cfg.global_rounds = int(value)?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad(format!("lr: bad number {value:?}")))?,
                "optimizer" => cfg.optimizer = value.parse().map_err(bad)?,
                "lr_schedule" => cfg.lr_schedule = value.parse().map_err(bad)?,
                "augmentation" => cfg.augmentation = value.parse().map_err(bad)?,
                "model_arch" => cfg.model_arch = value.to_string(),
                "upload_mode" => {
                    cfg.upload_mode = match value {
                        "sequential" => UploadMode::Sequential,
                        "parallel" => UploadMode::Parallel,
                        _ => return Err(bad(format!("unknown upload mode {value:?}"))),
                    }
                }
                other => return Err(bad(format!("unknown config key {other:?}"))),
            }
        }
        cfg.check()?;
        Ok(cfg)
    }
}

/// Fields an advisor may change between trials.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigPatch {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_arch: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<Optimizer>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr_schedule: Option<LrSchedule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<Augmentation>,
}

pub const PATCHABLE_FIELDS: [&str; 5] = ["model_arch", "lr", "optimizer", "lr_schedule", "augmentation"];

impl ConfigPatch {
    pub fn apply(&self, cfg: &FlConfig) -> FlConfig {
        let mut out = cfg.clone();
        if let Some(arch) = &self.model_arch {
            out.model_arch = arch.clone();
        }
        if let Some(lr) = self.lr {
            out.lr = lr;
        }
        if let Some(o) = self.optimizer {
            out.optimizer = o;
        }
        if let Some(s) = self.lr_schedule {
            out.lr_schedule = s;
        }
        if let Some(a) = self.augmentation {
            out.augmentation = a;
        }
        out
    }
}

/// Stable per-purpose seed derivation (SplitMix64 over the inputs).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

const PARTITION_STREAM: u64 = 0x5041_5254;
const INIT_STREAM: u64 = 0x494E_4954;

/// Seed for `client`'s local training in 0-based `round`.
pub fn client_seed(seed: u64, round: usize, client: usize) -> u64 {
    derive_seed(seed, &[round as u64, client as u64])
}

enum OptState {
    Sgd,
    Momentum { velocity: Vec<f64> },
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptState {
    fn new(opt: Optimizer, n: usize) -> Self {
        match opt {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::SgdMomentum { .. } => OptState::Momentum { velocity: vec![0.0; n] },
            Optimizer::Adam { .. } => OptState::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, opt: Optimizer, lr: f64, weights: &mut [f64], grad: &[f64]) {
        match (self, opt) {
            (OptState::Sgd, _) => {
                for (w, g) in weights.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            (OptState::Momentum { velocity }, Optimizer::SgdMomentum { mu }) => {
                for ((w, g), v) in weights.iter_mut().zip(grad).zip(velocity.iter_mut()) {
                    *v = mu * *v + g;
                    *w -= lr * *v;
                }
            }
            (OptState::Adam { m, v, t }, Optimizer::Adam { beta1, beta2, eps }) => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for (i, (w, g)) in weights.iter_mut().zip(grad).enumerate() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
            _ => unreachable!("optimizer state built from the same optimizer"),
        }
    }
}

/// Local update: `local_epochs` passes of shuffled minibatch training on
/// mean cross-entropy, at the learning rate scheduled for `round`.
/// Optimizer state starts fresh on every call.
pub fn local_train(model: &ModelParams, shard: &Dataset, cfg: &FlConfig, round: usize, seed: u64) -> ModelParams {
    assert!(!shard.is_empty(), "shard must be non-empty");
    let lr = cfg.lr_at(round);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = match cfg.augmentation {
        Augmentation::GaussianJitter { sigma } if sigma > 0.0 => Some(Normal::new(0.0, sigma).expect("sigma validated")),
        _ => None,
    };
    let mut out = model.clone();
    let mut state = OptState::new(cfg.optimizer, out.weights.len());
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let ys: Vec<usize> = chunk.iter().map(|&i| shard.y(i)).collect();
            let (_, grad) = match &jitter {
                None => {
                    let xs: Vec<&[f64]> = chunk.iter().map(|&i| shard.x(i)).collect();
                    loss_and_grad(&out, &xs, &ys)
                }
                Some(noise) => {
                    let owned: Vec<Vec<f64>> = chunk
                        .iter()
                        .map(|&i| shard.x(i).iter().map(|v| v + noise.sample(&mut rng)).collect())
                        .collect();
                    let xs: Vec<&[f64]> = owned.iter().map(Vec::as_slice).collect();
                    loss_and_grad(&out, &xs, &ys)
                }
            };
            state.step(cfg.optimizer, lr, &mut out.weights, &grad);
        }
    }
    out
}

/// Parameter-wise weighted mean, weights normalized to sum to one.
///
/// Each result is clamped to the range spanned by the inputs so rounding
/// never leaves the convex hull; identical inputs come back bit-identical.
pub fn fedavg_aggregate(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams, FedError> {
    let first = models.first().ok_or(FedError::InvalidWeights)?;
    if models.len() != weights.len() {
        return Err(FedError::InvalidWeights);
    }
    if models.iter().any(|m| !m.same_architecture(first)) {
        return Err(FedError::ArchMismatch);
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || !(total > 0.0 && total.is_finite()) {
        return Err(FedError::InvalidWeights);
    }
    let mut out = first.clone();
    for (j, slot) in out.weights.iter_mut().enumerate() {
        let (mut acc, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
        for (m, w) in models.iter().zip(weights) {
            let p = m.weights[j];
            acc += (w / total) * p;
            lo = lo.min(p);
            hi = hi.max(p);
        }
        *slot = acc.clamp(lo, hi);
    }
    Ok(out)
}

/// Broadcast, slowest client's compute, then uploads.
pub fn round_wallclock(model_bytes: u64, cfg: &FlConfig, scenario: &Scenario, client_compute_s: &[f64]) -> f64 {
    let down = &scenario.links.client_edge_down;
    let up = &scenario.links.client_edge_up;
    let broadcast = transfer_time(model_bytes, down);
    let compute = client_compute_s.iter().copied().fold(0.0, f64::max);
    let upload = match cfg.upload_mode {
        UploadMode::Sequential => (cfg.n_clients as u64 * model_bytes) as f64 / up.rate + up.propagation_delay,
        UploadMode::Parallel => transfer_time(model_bytes, up),
    };
    broadcast + compute + upload
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// 1-based global round.
    pub round: usize,
    pub accuracy: f64,
    /// Cumulative modeled wall-clock time, seconds.
    pub wallclock_s: f64,
}

/// One global round: every client trains from `global` on its shard (in
/// parallel), then the server averages with weights proportional to shard
/// sizes, in client order.
pub fn fl_round(
    global: &ModelParams,
    shards: &[Dataset],
    cfg: &FlConfig,
    round: usize,
    seed: u64,
) -> Result<ModelParams, FedError> {
    let locals: Vec<ModelParams> = std::thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .enumerate()
            .map(|(c, shard)| scope.spawn(move || local_train(global, shard, cfg, round, client_seed(seed, round, c))))
            .collect();
        handles.into_iter().map(|h| h.join().expect("client training panicked")).collect()
    });
    let sizes: Vec<f64> = shards.iter().map(|s| s.len() as f64).collect();
    fedavg_aggregate(&locals, &sizes)
}

/// Seed of the IID partition used by [`run_fl`].
pub fn partition_seed(seed: u64) -> u64 {
    derive_seed(seed, &[PARTITION_STREAM])
}

/// Seed of the initial global model used by [`run_fl`].
pub fn init_seed(seed: u64) -> u64 {
    derive_seed(seed, &[INIT_STREAM])
}

/// Runs FedAvg: every round broadcasts the global model, trains all clients
/// in parallel, aggregates with weights proportional to shard sizes, and
/// evaluates on the test set.
pub fn run_fl(cfg: &FlConfig, data: &FederatedData, scenario: &Scenario, seed: u64) -> Result<Vec<CurvePoint>, FedError> {
    cfg.check()?;
    let shards = partition_iid(&data.train, cfg.n_clients, partition_seed(seed));
    if shards.iter().any(Dataset::is_empty) {
        return Err(FedError::InvalidConfig("more clients than training samples".into()));
    }
    let mut global = init_model(
        &cfg.model_arch,
        data.train.dim(),
        data.train.classes(),
        init_seed(seed),
    )?;
    let client = scenario.client();
    let mut wall = 0.0;
    let mut curve = Vec::with_capacity(cfg.global_rounds);
    for round in 0..cfg.global_rounds {
        let compute: Vec<f64> = shards
            .iter()
            .map(|s| compute_time(global.train_flops(s.len(), cfg.local_epochs), client))
            .collect();
        wall += round_wallclock(global.bytes(), cfg, scenario, &compute);
        global = fl_round(&global, &shards, cfg, round, seed)?;
        curve.push(CurvePoint {
            round: round + 1,
            accuracy: global.accuracy(&data.test),
            wallclock_s: wall,
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    /// 1-based.
    pub trial_index: usize,
    pub config: FlConfig,
    pub accuracy_curve: Vec<CurvePoint>,
    pub advisor_raw: String,
}

impl TrialRecord {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy_curve.last().map_or(0.0, |p| p.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub records: Vec<TrialRecord>,
    /// Set when the loop stopped on an advisor or configuration error.
    pub aborted: Option<FedError>,
}

fn curve_text(curve: &[CurvePoint]) -> String {
    curve
        .iter()
        .map(|p| format!("{}:{:.4}", p.round, p.accuracy))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Advisor context for the next trial: purpose, patchable fields, current
/// configuration, dataset description and every earlier accuracy curve.
pub fn trial_context(current: &FlConfig, data: &FederatedData, history: &[TrialRecord]) -> String {
    let mut out = format!(
        "You configure a federated averaging job that trains a classifier across {} edge clients.\n\
         Goal: maximize final test accuracy.\n\
         You may change these fields: {}.\n\
         Architectures: linear, logistic, mlp-H[-H...]. Optimizers: sgd, momentum:MU, adam[:B1:B2:EPS]. \
         Schedules: constant, step:FACTOR:EVERY_ROUNDS. Augmentation: none, jitter:SIGMA.\n\
         Answer with one JSON object {{\"patch\": {{...}}}}, or NO_CHANGE if no modification would help.\n\
         Current configuration: {}\n",
        current.n_clients,
        PATCHABLE_FIELDS.join(", "),
        serde_json::to_string(current).expect("config serializes"),
    );
    for record in history {
        out.push_str(&format!(
            "Trial {} ({}): test accuracy by round {}\n",
            record.trial_index,
            serde_json::to_string(&record.config).expect("config serializes"),
            curve_text(&record.accuracy_curve)
        ));
    }
    out.push_str(&format!("\n### Request\nDataset: {}.", data.describe()));
    out
}

/// Advisor-driven configuration search.
///
/// Each trial asks the advisor for a patch, applies it on top of the current
/// configuration and runs federated training. `NO_CHANGE` runs the current
/// configuration one last time and stops. The loop also stops once the final
/// accuracy reaches `target_acc` or after `max_trials` trials. Advisor
/// errors end the loop and keep the records gathered so far.
pub fn trial_loop(
    advisor: &dyn Advisor,
    template: &FlConfig,
    data: &FederatedData,
    scenario: &Scenario,
    max_trials: usize,
    target_acc: f64,
    seed: u64,
) -> TrialOutcome {
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut current = template.clone();
    for trial in 1..=max_trials {
        let context = trial_context(&current, data, &records);
        let reply = match advisor.ask(&context, ReplyKind::FlProposal) {
            Ok(r) => r,
            Err(e) => {
                return TrialOutcome {
                    records,
                    aborted: Some(FedError::Advisor(e)),
                }
            }
        };
        let last = match &reply.body {
            ReplyBody::FlProposal(patch) => {
                current = patch.apply(&current);
                false
            }
            ReplyBody::NoChange => true,
            ReplyBody::Plan(_) => {
                return TrialOutcome {
                    records,
                    aborted: Some(FedError::Advisor(AdvisorError::MalformedReply(reply.raw_text))),
                }
            }
        };
        let curve = match run_fl(&current, data, scenario, seed) {
            Ok(c) => c,
            Err(e) => {
                return TrialOutcome {
                    records,
                    aborted: Some(e),
                }
            }
        };
        records.push(TrialRecord {
            trial_index: trial,
            config: current.clone(),
            accuracy_curve: curve,
            advisor_raw: reply.raw_text,
        });
        let reached = records.last().is_some_and(|r| r.final_accuracy() >= target_acc);
        if last || reached {
            break;
        }
    }
    TrialOutcome { records, aborted: None }
}
