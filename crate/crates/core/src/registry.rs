//! Model manifests, device and link profiles, and scenario files.
//!
//! A scenario is a single TOML document. Everything in it is expressed in
//! bytes, seconds and FLOPs. Rates may be written either as plain numbers
//! (bytes per second) or as strings with a decimal suffix such as
//! `"250k"` or `"250 KB/s"`, where `k`/`KB` means 1000 bytes.
//!
//! Loading is a pure function of the file bytes: the same bytes always give
//! the same [`Scenario`], and a loaded scenario written back out with
//! [`Scenario::to_toml`] loads to an equal value.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::advisor::RemoteSettings;
use crate::codec::SyntheticTask;
use crate::fedsim::{DataSpec, FlConfig};
use crate::planner::{KeywordRule, PrefixSpec};

/// The bundled calibrated scenario, embedded at build time.
pub const BUNDLED_SCENARIO: &str = include_str!("../data/default_scenario.toml");

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegistryError {
    #[error("scenario file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scenario: {field}: {reason}")]
    Validation { field: String, reason: String },
}

impl RegistryError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        RegistryError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// What a model does. Unknown names parse to [`TaskKind::Custom`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    ImageClassification,
    ImageCaptioning,
    Vqa,
    PoseDetection,
    PoseToImage,
    MoodFromTraffic,
    MoodFromPhysio,
    Custom(String),
}

/// Kind of data flowing between plan steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Image,
    Text,
    Label,
    Pose,
    Traffic,
    Physio,
    Any,
}

impl DataKind {
    pub fn compatible(self, other: DataKind) -> bool {
        self == other || self == DataKind::Any || other == DataKind::Any
    }
}

impl TaskKind {
    pub fn as_str(&self) -> &str {
        match self {
            TaskKind::ImageClassification => "image_classification",
            TaskKind::ImageCaptioning => "image_captioning",
            TaskKind::Vqa => "vqa",
            TaskKind::PoseDetection => "pose_detection",
            TaskKind::PoseToImage => "pose_to_image",
            TaskKind::MoodFromTraffic => "mood_from_traffic",
            TaskKind::MoodFromPhysio => "mood_from_physio",
            TaskKind::Custom(name) => name,
        }
    }

    pub fn input_kind(&self) -> DataKind {
        match self {
            TaskKind::ImageClassification
            | TaskKind::ImageCaptioning
            | TaskKind::Vqa
            | TaskKind::PoseDetection => DataKind::Image,
            TaskKind::PoseToImage => DataKind::Pose,
            TaskKind::MoodFromTraffic => DataKind::Traffic,
            TaskKind::MoodFromPhysio => DataKind::Physio,
            TaskKind::Custom(_) => DataKind::Any,
        }
    }

    pub fn output_kind(&self) -> DataKind {
        match self {
            TaskKind::ImageClassification
            | TaskKind::MoodFromTraffic
            | TaskKind::MoodFromPhysio => DataKind::Label,
            TaskKind::ImageCaptioning | TaskKind::Vqa => DataKind::Text,
            TaskKind::PoseDetection => DataKind::Pose,
            TaskKind::PoseToImage => DataKind::Image,
            TaskKind::Custom(_) => DataKind::Any,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let normalized = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        Ok(match normalized.as_str() {
            "image_classification" | "classification" => TaskKind::ImageClassification,
            "image_captioning" | "captioning" | "image_caption" => TaskKind::ImageCaptioning,
            "vqa" | "visual_question_answering" => TaskKind::Vqa,
            "pose_detection" => TaskKind::PoseDetection,
            "pose_to_image" => TaskKind::PoseToImage,
            "mood_from_traffic" => TaskKind::MoodFromTraffic,
            "mood_from_physio" => TaskKind::MoodFromPhysio,
            _ => TaskKind::Custom(s.trim().to_string()),
        })
    }
}

impl Serialize for TaskKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for TaskKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(s.parse().unwrap_or_else(|never| match never {}))
    }
}

/// Cost of one layer and the size of the feature it emits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub flops: u64,
    pub out_feature_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub id: String,
    pub task_kind: TaskKind,
    pub param_count: u64,
    pub input_bytes: u64,
    pub layers: Vec<LayerProfile>,
}

impl ModelManifest {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Bytes that cross the link when the model is split after `split`
    /// layers. Split 0 sends the raw input.
    pub fn feature_bytes(&self, split: usize) -> u64 {
        if split == 0 {
            self.input_bytes
        } else {
            self.layers[split - 1].out_feature_bytes
        }
    }

    pub fn result_bytes(&self) -> u64 {
        self.layers.last().map_or(0, |l| l.out_feature_bytes)
    }

    pub fn total_flops(&self) -> u64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// FLOPs of layers `1..=split`.
    pub fn head_flops(&self, split: usize) -> u64 {
        self.layers[..split].iter().map(|l| l.flops).sum()
    }

    /// FLOPs of layers `split+1..=L`.
    pub fn tail_flops(&self, split: usize) -> u64 {
        self.layers[split..].iter().map(|l| l.flops).sum()
    }

    pub fn validate(&self, field: &str) -> Result<(), RegistryError> {
        if self.id.trim().is_empty() {
            return Err(RegistryError::invalid(format!("{field}.id"), "empty"));
        }
        if self.layers.is_empty() {
            return Err(RegistryError::invalid(format!("{field}.layers"), "must be non-empty"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.flops == 0 {
                return Err(RegistryError::invalid(
                    format!("{field}.layers[{i}].flops"),
                    "must be > 0",
                ));
            }
        }
        if self.result_bytes() == 0 {
            return Err(RegistryError::invalid(
                format!("{field}.layers[{}].out_feature_bytes", self.layers.len() - 1),
                "final result size must be > 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Client,
    Edge,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: String,
    pub tier: Tier,
    /// FLOP/s.
    pub throughput: f64,
}

/// A directed link. `rate` is bytes per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkProfile {
    #[serde(deserialize_with = "de_rate")]
    pub rate: f64,
    #[serde(default)]
    pub propagation_delay: f64,
}

impl LinkProfile {
    pub fn new(rate: f64, propagation_delay: f64) -> Self {
        LinkProfile {
            rate,
            propagation_delay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Links {
    pub client_edge_up: LinkProfile,
    pub client_edge_down: LinkProfile,
    pub edge_cloud_up: LinkProfile,
    pub edge_cloud_down: LinkProfile,
}

/// Fixed costs of asking the cloud-hosted advisor for a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanningProfile {
    pub request_bytes: u64,
    pub reply_bytes: u64,
    /// Advisor compute time per request, seconds.
    pub advisor_s: f64,
}

impl Default for PlanningProfile {
    fn default() -> Self {
        PlanningProfile {
            request_bytes: 0,
            reply_bytes: 0,
            advisor_s: 0.5,
        }
    }
}

fn default_lossy_ratio() -> f64 {
    6.6
}

fn default_fusion_s() -> f64 {
    0.1
}

/// Offline advisor settings carried by a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AdvisorSettings {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rules: Vec<KeywordRule>,
    /// Raw replies for the scripted federated-learning advisor.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fl_script: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: String,
    pub lossy_compression_ratio: f64,
    pub fusion_overhead_s: f64,
    pub planning: PlanningProfile,
    pub devices: Vec<DeviceProfile>,
    pub links: Links,
    pub models: Vec<ModelManifest>,
    pub planner: PrefixSpec,
    #[serde(skip_serializing_if = "AdvisorSettings::is_empty")]
    pub advisor: AdvisorSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fl: Option<FlConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fl_data: Option<DataSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub codec: Option<SyntheticTask>,
}

impl AdvisorSettings {
    fn is_empty(&self) -> bool {
        self.rules.is_empty() && self.fl_script.is_empty() && self.remote.is_none()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinks {
    client_edge_up: Option<LinkProfile>,
    client_edge_down: Option<LinkProfile>,
    edge_cloud_up: Option<LinkProfile>,
    edge_cloud_down: Option<LinkProfile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    #[serde(default = "default_lossy_ratio")]
    lossy_compression_ratio: f64,
    #[serde(default = "default_fusion_s")]
    fusion_overhead_s: f64,
    #[serde(default)]
    planning: PlanningProfile,
    #[serde(default)]
    devices: Vec<DeviceProfile>,
    links: Option<RawLinks>,
    #[serde(default)]
    models: Vec<ModelManifest>,
    #[serde(default)]
    planner: PrefixSpec,
    #[serde(default)]
    advisor: AdvisorSettings,
    fl: Option<FlConfig>,
    fl_data: Option<DataSpec>,
    codec: Option<SyntheticTask>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl Scenario {
    /// Parses and validates scenario text.
    pub fn from_toml(text: &str) -> Result<Scenario, RegistryError> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| RegistryError::Parse {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        let links = raw
            .links
            .ok_or_else(|| RegistryError::invalid("links", "missing"))?;
        let need = |link: Option<LinkProfile>, name: &str| {
            link.ok_or_else(|| RegistryError::invalid(format!("links.{name}"), "missing"))
        };
        let links = Links {
            client_edge_up: need(links.client_edge_up, "client_edge_up")?,
            client_edge_down: need(links.client_edge_down, "client_edge_down")?,
            edge_cloud_up: need(links.edge_cloud_up, "edge_cloud_up")?,
            edge_cloud_down: need(links.edge_cloud_down, "edge_cloud_down")?,
        };
        let scenario = Scenario {
            name: raw.name,
            lossy_compression_ratio: raw.lossy_compression_ratio,
            fusion_overhead_s: raw.fusion_overhead_s,
            planning: raw.planning,
            devices: raw.devices,
            links,
            models: raw.models,
            planner: raw.planner,
            advisor: raw.advisor,
            fl: raw.fl,
            fl_data: raw.fl_data,
            codec: raw.codec,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario values are always representable in TOML")
    }

    pub fn bundled() -> Scenario {
        Scenario::from_toml(BUNDLED_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let mut ids = HashSet::new();
        for (i, d) in self.devices.iter().enumerate() {
            if !ids.insert(d.id.as_str()) {
                return Err(RegistryError::invalid(format!("devices[{i}].id"), format!("duplicate id {:?}", d.id)));
            }
            if !(d.throughput.is_finite() && d.throughput > 0.0) {
                return Err(RegistryError::invalid(format!("devices[{i}].throughput"), "must be > 0"));
            }
        }
        for tier in [Tier::Client, Tier::Edge] {
            if !self.devices.iter().any(|d| d.tier == tier) {
                let name = if tier == Tier::Client { "client" } else { "edge" };
                return Err(RegistryError::invalid("devices", format!("no {name} device")));
            }
        }
        let links = [
            ("client_edge_up", self.links.client_edge_up),
            ("client_edge_down", self.links.client_edge_down),
            ("edge_cloud_up", self.links.edge_cloud_up),
            ("edge_cloud_down", self.links.edge_cloud_down),
        ];
        for (name, link) in links {
            if !(link.rate.is_finite() && link.rate > 0.0) {
                return Err(RegistryError::invalid(format!("links.{name}.rate"), "must be > 0"));
            }
            if !(link.propagation_delay.is_finite() && link.propagation_delay >= 0.0) {
                return Err(RegistryError::invalid(
                    format!("links.{name}.propagation_delay"),
                    "must be >= 0",
                ));
            }
        }
        let mut model_ids = HashSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if !model_ids.insert(m.id.as_str()) {
                return Err(RegistryError::invalid(format!("models[{i}].id"), format!("duplicate id {:?}", m.id)));
            }
            m.validate(&format!("models[{i}]"))?;
        }
        if !(self.lossy_compression_ratio > 1.0 && self.lossy_compression_ratio.is_finite()) {
            return Err(RegistryError::invalid("lossy_compression_ratio", "must be > 1"));
        }
        if !(self.fusion_overhead_s >= 0.0 && self.fusion_overhead_s.is_finite()) {
            return Err(RegistryError::invalid("fusion_overhead_s", "must be >= 0"));
        }
        if !(self.planning.advisor_s >= 0.0 && self.planning.advisor_s.is_finite()) {
            return Err(RegistryError::invalid("planning.advisor_s", "must be >= 0"));
        }
        self.planner
            .validate(self)
            .map_err(|(field, reason)| RegistryError::invalid(format!("planner.{field}"), reason))?;
        for (i, rule) in self.advisor.rules.iter().enumerate() {
            if rule.keywords.is_empty() {
                return Err(RegistryError::invalid(format!("advisor.rules[{i}].keywords"), "must be non-empty"));
            }
        }
        if let Some(fl) = &self.fl {
            fl.validate()
                .map_err(|(field, reason)| RegistryError::invalid(format!("fl.{field}"), reason))?;
        }
        if let Some(data) = &self.fl_data {
            data.validate()
                .map_err(|(field, reason)| RegistryError::invalid(format!("fl_data.{field}"), reason))?;
        }
        if let Some(task) = &self.codec {
            task.validate()
                .map_err(|(field, reason)| RegistryError::invalid(format!("codec.{field}"), reason))?;
        }
        Ok(())
    }

    pub fn model(&self, id: &str) -> Option<&ModelManifest> {
        self.models.iter().find(|m| m.id == id)
    }

    /// First device of the given tier, in file order.
    pub fn device(&self, tier: Tier) -> Option<&DeviceProfile> {
        self.devices.iter().find(|d| d.tier == tier)
    }

    pub fn client(&self) -> &DeviceProfile {
        self.device(Tier::Client).expect("validated scenario has a client")
    }

    pub fn edge(&self) -> &DeviceProfile {
        self.device(Tier::Edge).expect("validated scenario has an edge server")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, RegistryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RegistryError::FileNotFound(path.to_path_buf()),
        _ => RegistryError::Parse {
            line: 0,
            message: e.to_string(),
        },
    })?;
    Scenario::from_toml(&text)
}

/// Every manifest for `task_kind`, sorted by id.
pub fn candidates_for<'a>(task_kind: &TaskKind, scenario: &'a Scenario) -> Vec<&'a ModelManifest> {
    let mut found: Vec<_> = scenario
        .models
        .iter()
        .filter(|m| &m.task_kind == task_kind)
        .collect();
    found.sort_by(|a, b| a.id.cmp(&b.id));
    found
}

/// Parses a byte rate such as `250000`, `"250k"`, `"250 KB/s"` or `"1.5M"`.
/// Suffixes are decimal: k = 1e3, M = 1e6, G = 1e9.
pub fn parse_rate(text: &str) -> Result<f64, String> {
    let t = text.trim();
    let t = t
        .strip_suffix("/s")
        .or_else(|| t.strip_suffix("ps"))
        .unwrap_or(t)
        .trim_end();
    let t = t
        .strip_suffix(['B', 'b'])
        .unwrap_or(t)
        .trim_end();
    let (number, scale) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 1e3),
        Some('m' | 'M') => (&t[..t.len() - 1], 1e6),
        Some('g' | 'G') => (&t[..t.len() - 1], 1e9),
        _ => (t, 1.0),
    };
    let value: f64 = number
        .trim()
        .parse()
        .map_err(|_| format!("invalid rate {text:?}"))?;
    let rate = value * scale;
    if rate.is_finite() && rate > 0.0 {
        Ok(rate)
    } else {
        Err(format!("rate must be positive, got {text:?}"))
    }
}

fn de_rate<'de, D: Deserializer<'de>>(deserializer: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RateRepr {
        Number(f64),
        Text(String),
    }
    match RateRepr::deserialize(deserializer)? {
        RateRepr::Number(v) => Ok(v),
        RateRepr::Text(s) => parse_rate(&s).map_err(serde::de::Error::custom),
    }
}
