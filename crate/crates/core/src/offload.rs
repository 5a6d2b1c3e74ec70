//! Latency model for the execution schemes and the partition-point search.
//!
//! Every stage is deterministic. Transfers cost `bytes / rate +
//! propagation_delay`, and compute costs `flops / throughput`. The planning
//! term is the same for every scheme: the request travels client → edge →
//! cloud, the advisor thinks for a fixed time, and the reply comes back.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::registry::{DeviceProfile, LinkProfile, ModelManifest, Scenario, Tier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    ClientOnly,
    EdgeOnlyLossless,
    EdgeOnlyLossy { compression_ratio: f64 },
    /// Client runs layers `1..=split`, edge runs the rest.
    CoInference { split: usize },
    CloudOnly,
}

/// Parameter-free scheme names used by sweeps; co-inference picks its split
/// per rate and lossy compression uses the scenario's ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ClientOnly,
    EdgeOnlyLossless,
    EdgeOnlyLossy,
    CoInference,
    CloudOnly,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 5] = [
        SchemeKind::ClientOnly,
        SchemeKind::EdgeOnlyLossless,
        SchemeKind::EdgeOnlyLossy,
        SchemeKind::CoInference,
        SchemeKind::CloudOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::ClientOnly => "client_only",
            SchemeKind::EdgeOnlyLossless => "edge_only_lossless",
            SchemeKind::EdgeOnlyLossy => "edge_only_lossy",
            SchemeKind::CoInference => "co_inference",
            SchemeKind::CloudOnly => "cloud_only",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| format!("unknown scheme {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LatencyBreakdown {
    pub planning: f64,
    pub upload: f64,
    pub client_compute: f64,
    pub edge_compute: f64,
    pub cloud_compute: f64,
    pub download: f64,
    pub total: f64,
}

impl LatencyBreakdown {
    /// Builds a breakdown whose total is the left-to-right sum of the parts
    /// in field order.
    pub fn from_parts(
        planning: f64,
        upload: f64,
        client_compute: f64,
        edge_compute: f64,
        cloud_compute: f64,
        download: f64,
    ) -> Self {
        LatencyBreakdown {
            planning,
            upload,
            client_compute,
            edge_compute,
            cloud_compute,
            download,
            total: planning + upload + client_compute + edge_compute + cloud_compute + download,
        }
    }

    pub fn parts(&self) -> [f64; 6] {
        [
            self.planning,
            self.upload,
            self.client_compute,
            self.edge_compute,
            self.cloud_compute,
            self.download,
        ]
    }

    /// The same breakdown without the planning term.
    pub fn without_planning(&self) -> Self {
        let [_, u, c, e, k, d] = self.parts();
        Self::from_parts(0.0, u, c, e, k, d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionDecision {
    pub split: usize,
    pub latency: LatencyBreakdown,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OffloadError {
    #[error("split {split} is outside 0..={layers}")]
    InvalidSplit { split: usize, layers: usize },
    #[error("compression ratio must be > 1, got {0}")]
    InvalidCompressionRatio(f64),
    #[error("scenario has no cloud device")]
    NoCloudDevice,
}

pub fn transfer_time(bytes: u64, link: &LinkProfile) -> f64 {
    bytes as f64 / link.rate + link.propagation_delay
}

pub fn compute_time(flops: u64, device: &DeviceProfile) -> f64 {
    flops as f64 / device.throughput
}

/// Request upload to the cloud, advisor compute, and reply download.
pub fn planning_time(scenario: &Scenario) -> f64 {
    let p = &scenario.planning;
    let l = &scenario.links;
    transfer_time(p.request_bytes, &l.client_edge_up)
        + transfer_time(p.request_bytes, &l.edge_cloud_up)
        + p.advisor_s
        + transfer_time(p.reply_bytes, &l.edge_cloud_down)
        + transfer_time(p.reply_bytes, &l.client_edge_down)
}

pub fn scheme_latency(
    manifest: &ModelManifest,
    scheme: Scheme,
    scenario: &Scenario,
) -> Result<LatencyBreakdown, OffloadError> {
    let links = &scenario.links;
    let client = scenario.client();
    let edge = scenario.edge();
    let planning = planning_time(scenario);
    let result = manifest.result_bytes();
    let flops = manifest.total_flops();
    let to_client = || transfer_time(result, &links.client_edge_down);
    let b = match scheme {
        Scheme::ClientOnly => {
            LatencyBreakdown::from_parts(planning, 0.0, compute_time(flops, client), 0.0, 0.0, 0.0)
        }
        Scheme::EdgeOnlyLossless => LatencyBreakdown::from_parts(
            planning,
            transfer_time(manifest.input_bytes, &links.client_edge_up),
            0.0,
            compute_time(flops, edge),
            0.0,
            to_client(),
        ),
        Scheme::EdgeOnlyLossy { compression_ratio } => {
            if !(compression_ratio > 1.0 && compression_ratio.is_finite()) {
                return Err(OffloadError::InvalidCompressionRatio(compression_ratio));
            }
            let bytes = (manifest.input_bytes as f64 / compression_ratio).ceil() as u64;
            LatencyBreakdown::from_parts(
                planning,
                transfer_time(bytes, &links.client_edge_up),
                0.0,
                compute_time(flops, edge),
                0.0,
                to_client(),
            )
        }
        Scheme::CoInference { split } => {
            let layers = manifest.num_layers();
            if split > layers {
                return Err(OffloadError::InvalidSplit { split, layers });
            }
            LatencyBreakdown::from_parts(
                planning,
                transfer_time(manifest.feature_bytes(split), &links.client_edge_up),
                compute_time(manifest.head_flops(split), client),
                compute_time(manifest.tail_flops(split), edge),
                0.0,
                to_client(),
            )
        }
        Scheme::CloudOnly => {
            let cloud = scenario.device(Tier::Cloud).ok_or(OffloadError::NoCloudDevice)?;
            LatencyBreakdown::from_parts(
                planning,
                transfer_time(manifest.input_bytes, &links.client_edge_up)
                    + transfer_time(manifest.input_bytes, &links.edge_cloud_up),
                0.0,
                0.0,
                compute_time(flops, cloud),
                transfer_time(result, &links.edge_cloud_down) + to_client(),
            )
        }
    };
    Ok(b)
}

/// Exhaustive search over splits `0..=L`; the smallest split wins ties.
pub fn best_partition(manifest: &ModelManifest, scenario: &Scenario) -> PartitionDecision {
    let mut best: Option<PartitionDecision> = None;
    for split in 0..=manifest.num_layers() {
        let latency = scheme_latency(manifest, Scheme::CoInference { split }, scenario)
            .expect("split within range");
        if best.is_none_or(|b| latency.total < b.latency.total) {
            best = Some(PartitionDecision { split, latency });
        }
    }
    best.expect("at least split 0 is evaluated")
}

/// Latency of a sweep scheme; co-inference reports its best split.
pub fn kind_latency(
    manifest: &ModelManifest,
    kind: SchemeKind,
    scenario: &Scenario,
) -> Result<(LatencyBreakdown, Option<usize>), OffloadError> {
    let scheme = match kind {
        SchemeKind::ClientOnly => Scheme::ClientOnly,
        SchemeKind::EdgeOnlyLossless => Scheme::EdgeOnlyLossless,
        SchemeKind::EdgeOnlyLossy => Scheme::EdgeOnlyLossy {
            compression_ratio: scenario.lossy_compression_ratio,
        },
        SchemeKind::CloudOnly => Scheme::CloudOnly,
        SchemeKind::CoInference => {
            let d = best_partition(manifest, scenario);
            return Ok((d.latency, Some(d.split)));
        }
    };
    Ok((scheme_latency(manifest, scheme, scenario)?, None))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    /// Client-to-edge uplink rate, bytes per second.
    pub rate: f64,
    pub scheme: SchemeKind,
    pub latency: LatencyBreakdown,
}

fn with_uplink(scenario: &Scenario, rate: f64) -> Scenario {
    let mut s = scenario.clone();
    s.links.client_edge_up.rate = rate;
    s
}

/// Evaluates every scheme at every client-to-edge uplink rate. Rows come out
/// in (rate, scheme) order as given.
pub fn latency_sweep(
    manifest: &ModelManifest,
    scenario: &Scenario,
    schemes: &[SchemeKind],
    rates: &[f64],
) -> Result<Vec<SweepRow>, OffloadError> {
    latency_sweep_mix(&[(manifest, 1.0)], scenario, schemes, rates)
}

/// Like [`latency_sweep`] over a weighted request mix: each field is the
/// weight-normalized mean across models.
pub fn latency_sweep_mix(
    mix: &[(&ModelManifest, f64)],
    scenario: &Scenario,
    schemes: &[SchemeKind],
    rates: &[f64],
) -> Result<Vec<SweepRow>, OffloadError> {
    let weight_sum: f64 = mix.iter().map(|(_, w)| w).sum();
    let mut rows = Vec::with_capacity(rates.len() * schemes.len());
    for &rate in rates {
        let s = with_uplink(scenario, rate);
        for &kind in schemes {
            let latency = if let [(manifest, _)] = mix {
                kind_latency(manifest, kind, &s)?.0
            } else {
                let mut parts = [0.0; 6];
                for (manifest, weight) in mix {
                    let b = kind_latency(manifest, kind, &s)?.0;
                    for (acc, p) in parts.iter_mut().zip(b.parts()) {
                        *acc += weight / weight_sum * p;
                    }
                }
                let [p, u, c, e, k, d] = parts;
                LatencyBreakdown::from_parts(p, u, c, e, k, d)
            };
            rows.push(SweepRow {
                rate,
                scheme: kind,
                latency,
            });
        }
    }
    Ok(rows)
}

/// Expands `start:stop:step` (inclusive) or a comma-separated list. Rates
/// may carry k/M suffixes.
pub fn parse_rate_range(text: &str) -> Result<Vec<f64>, String> {
    if text.contains(',') {
        return text.split(',').map(crate::registry::parse_rate).collect();
    }
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![crate::registry::parse_rate(single)?]),
        [start, stop, step] => {
            let start = crate::registry::parse_rate(start)?;
            let stop = crate::registry::parse_rate(stop)?;
            let step = crate::registry::parse_rate(step)?;
            if stop < start {
                return Err(format!("empty rate range {text:?}"));
            }
            if step.is_nan() || step <= 0.0 {
                return Err(format!("rate step must be positive, got {text:?}"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(format!("rate range must be start:stop:step, got {text:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{LayerProfile, TaskKind};

    fn three_layer() -> (ModelManifest, Scenario) {
        let mut s = Scenario::bundled();
        s.devices.retain(|d| d.tier != Tier::Client && d.tier != Tier::Edge && d.tier != Tier::Cloud);
        s.devices.push(DeviceProfile { id: "c".into(), tier: Tier::Client, throughput: 1e9 });
        s.devices.push(DeviceProfile { id: "e".into(), tier: Tier::Edge, throughput: 1e10 });
        s.devices.push(DeviceProfile { id: "k".into(), tier: Tier::Cloud, throughput: 1e11 });
        s.links.client_edge_up = LinkProfile::new(1e5, 0.01);
        s.links.client_edge_down = LinkProfile::new(2e5, 0.01);
        s.links.edge_cloud_up = LinkProfile::new(1e6, 0.1);
        s.links.edge_cloud_down = LinkProfile::new(1e6, 0.1);
        s.planning.request_bytes = 0;
        s.planning.reply_bytes = 0;
        s.planning.advisor_s = 0.5;
        let m = ModelManifest {
            id: "m3".into(),
            task_kind: TaskKind::ImageClassification,
            param_count: 1,
            input_bytes: 100_000,
            layers: vec![
                LayerProfile { flops: 200_000_000, out_feature_bytes: 40_000 },
                LayerProfile { flops: 300_000_000, out_feature_bytes: 10_000 },
                LayerProfile { flops: 500_000_000, out_feature_bytes: 1_000 },
            ],
        };
        (m, s)
    }

    #[test]
    fn transfer_examples() {
        assert_eq!(transfer_time(0, &LinkProfile::new(1e6, 0.01)), 0.01);
        let t = transfer_time(224_410, &LinkProfile::new(300_000.0, 0.0));
        assert!((t - 0.748_033_333_333_333_3).abs() < 1e-12);
        let slow = transfer_time(12_345, &LinkProfile::new(1000.0, 0.0));
        let fast = transfer_time(12_345, &LinkProfile::new(2000.0, 0.0));
        assert_eq!(slow, 2.0 * fast);
    }

    #[test]
    fn compute_examples() {
        let d = DeviceProfile { id: "d".into(), tier: Tier::Edge, throughput: 1e9 };
        assert_eq!(compute_time(0, &d), 0.0);
        assert_eq!(compute_time(1_000_000_000, &d), 1.0);
    }

    #[test]
    fn hand_summed_table() {
        let (m, s) = three_layer();
        // planning: 0.01 + 0.1 + 0.5 + 0.1 + 0.01 = 0.72
        // download: 1000 / 2e5 + 0.01 = 0.015
        let cases = [
            // split, upload, client, edge
            (0, 1.01, 0.0, 0.1),
            (1, 0.41, 0.2, 0.08),
            (2, 0.11, 0.5, 0.05),
            (3, 0.02, 1.0, 0.0),
        ];
        for (split, upload, client, edge) in cases {
            let b = scheme_latency(&m, Scheme::CoInference { split }, &s).unwrap();
            assert!((b.planning - 0.72).abs() < 1e-12, "{b:?}");
            assert!((b.upload - upload).abs() < 1e-12, "split {split}: {b:?}");
            assert!((b.client_compute - client).abs() < 1e-12);
            assert!((b.edge_compute - edge).abs() < 1e-12);
            assert_eq!(b.cloud_compute, 0.0);
            assert!((b.download - 0.015).abs() < 1e-12);
            let expected = 0.72 + upload + client + edge + 0.015;
            assert!((b.total - expected).abs() < 1e-12);
        }
        // 0.72 + 0.11 + 0.5 + 0.05 + 0.015 = 1.395 is the minimum
        let best = best_partition(&m, &s);
        assert_eq!(best.split, 2);
        assert!((best.latency.total - 1.395).abs() < 1e-12);

        let cloud = scheme_latency(&m, Scheme::CloudOnly, &s).unwrap();
        assert!((cloud.upload - (1.01 + 0.2)).abs() < 1e-12);
        assert!((cloud.cloud_compute - 0.01).abs() < 1e-12);
        assert!((cloud.download - (0.101 + 0.015)).abs() < 1e-12);
        let lossy = scheme_latency(&m, Scheme::EdgeOnlyLossy { compression_ratio: 4.0 }, &s).unwrap();
        assert!((lossy.upload - 0.26).abs() < 1e-12);
    }

    #[test]
    fn boundary_identities() {
        let (m, s) = three_layer();
        let co0 = scheme_latency(&m, Scheme::CoInference { split: 0 }, &s).unwrap();
        assert_eq!(co0, scheme_latency(&m, Scheme::EdgeOnlyLossless, &s).unwrap());
        let l = m.num_layers();
        let col = scheme_latency(&m, Scheme::CoInference { split: l }, &s).unwrap();
        let client = scheme_latency(&m, Scheme::ClientOnly, &s).unwrap();
        assert_eq!(col.planning, client.planning);
        assert_eq!(col.client_compute, client.client_compute);
        assert_eq!(col.edge_compute, 0.0);
        assert_eq!(col.upload, transfer_time(m.result_bytes(), &s.links.client_edge_up));
        assert_eq!(col.download, transfer_time(m.result_bytes(), &s.links.client_edge_down));
        assert_eq!(client.upload, 0.0);
        assert_eq!(client.download, 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let (m, mut s) = three_layer();
        assert_eq!(
            scheme_latency(&m, Scheme::CoInference { split: 4 }, &s),
            Err(OffloadError::InvalidSplit { split: 4, layers: 3 })
        );
        assert!(scheme_latency(&m, Scheme::EdgeOnlyLossy { compression_ratio: 1.0 }, &s).is_err());
        s.devices.retain(|d| d.tier != Tier::Cloud);
        assert_eq!(scheme_latency(&m, Scheme::CloudOnly, &s), Err(OffloadError::NoCloudDevice));
    }

    #[test]
    fn extreme_regimes() {
        let (m, mut s) = three_layer();
        s.devices[1].throughput = 1e300;
        s.links.client_edge_up = LinkProfile::new(1e300, 0.0);
        s.links.client_edge_down = LinkProfile::new(1e300, 0.0);
        assert_eq!(best_partition(&m, &s).split, 0);

        let (mut m, mut s) = three_layer();
        for layer in &mut m.layers[..2] {
            layer.out_feature_bytes = 10_000_000;
        }
        m.input_bytes = 10_000_000;
        m.layers[2].out_feature_bytes = 1;
        s.links.client_edge_up = LinkProfile::new(1.0, 0.0);
        assert_eq!(best_partition(&m, &s).split, 3);
    }

    #[test]
    fn ties_prefer_smaller_split() {
        let (mut m, mut s) = three_layer();
        for l in &mut m.layers {
            l.out_feature_bytes = 1000;
        }
        m.input_bytes = 1000;
        s.devices.iter_mut().for_each(|d| d.throughput = 1e300);
        assert_eq!(best_partition(&m, &s).split, 0);
    }

    #[test]
    fn degenerate_sweep() {
        let (m, s) = three_layer();
        let rows = latency_sweep(&m, &s, &[SchemeKind::EdgeOnlyLossless], &[1e5]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].latency, scheme_latency(&m, Scheme::EdgeOnlyLossless, &s).unwrap());
    }

    #[test]
    fn mix_of_one_model_matches_single() {
        let (m, s) = three_layer();
        let rates = [5e4, 1e5];
        let single = latency_sweep(&m, &s, &SchemeKind::ALL, &rates).unwrap();
        let mixed = latency_sweep_mix(&[(&m, 0.5), (&m, 0.5)], &s, &SchemeKind::ALL, &rates).unwrap();
        for (a, b) in single.iter().zip(&mixed) {
            assert!((a.latency.total - b.latency.total).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_ranges() {
        let r = parse_rate_range("100k:500k:50k").unwrap();
        assert_eq!(r.len(), 9);
        assert_eq!(r[0], 100_000.0);
        assert_eq!(r[8], 500_000.0);
        assert_eq!(parse_rate_range("250k").unwrap(), vec![250_000.0]);
        assert!(parse_rate_range("5k:1k:1k").is_err());
        assert!(parse_rate_range("1k:5k:0").is_err());
        assert_eq!(parse_rate_range("100k, 2M").unwrap(), vec![100_000.0, 2_000_000.0]);
        assert!(parse_rate_range("1:2").is_err());
    }
}
