use serde::Serialize;

use crate::offload::{best_partition, planning_time, scheme_latency, LatencyBreakdown, PartitionDecision, Scheme, SchemeKind};
use crate::planner::{Combine, TaskPlan};
use crate::registry::{Scenario, TaskKind};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EndToEndError {
    #[error("step {index} ({task}): model {model:?} is not in the scenario")]
    UnresolvableStep { index: usize, task: TaskKind, model: String },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLatency {
    pub task_kind: TaskKind,
    pub model_id: String,
    pub scheme: SchemeKind,
    pub partition: PartitionDecision,
    /// Latency of the chosen scheme, without the planning term.
    pub latency: LatencyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndToEnd {
    pub combine: Combine,
    pub planning_s: f64,
    pub steps: Vec<StepLatency>,
    pub fusion_s: f64,
    pub total_s: f64,
}

/// End-to-end latency of a plan.
///
/// Each step runs the fastest of co-inference at its best split, client-only
/// and edge-only; ties keep that order. Planning is charged once. Sequential
/// steps add up, fused steps run in parallel and pay the scenario's fusion
/// overhead on top of the slowest one.
pub fn emit_end_to_end(plan: &TaskPlan, scenario: &Scenario) -> Result<EndToEnd, EndToEndError> {
    plan.check_shape().map_err(EndToEndError::InvalidPlan)?;
    let mut steps = Vec::with_capacity(plan.steps.len());
    for (index, step) in plan.steps.iter().enumerate() {
        let manifest = scenario
            .model(&step.model_id)
            .filter(|m| m.task_kind == step.task_kind)
            .ok_or_else(|| EndToEndError::UnresolvableStep {
                index,
                task: step.task_kind.clone(),
                model: step.model_id.clone(),
            })?;
        let partition = best_partition(manifest, scenario);
        let mut chosen = (SchemeKind::CoInference, partition.latency);
        for (kind, scheme) in [
            (SchemeKind::ClientOnly, Scheme::ClientOnly),
            (SchemeKind::EdgeOnlyLossless, Scheme::EdgeOnlyLossless),
        ] {
            let latency = scheme_latency(manifest, scheme, scenario).expect("parameter-free scheme");
            if latency.total < chosen.1.total {
                chosen = (kind, latency);
            }
        }
        steps.push(StepLatency {
            task_kind: step.task_kind.clone(),
            model_id: step.model_id.clone(),
            scheme: chosen.0,
            partition,
            latency: chosen.1.without_planning(),
        });
    }
    let planning_s = planning_time(scenario);
    let (fusion_s, work) = match plan.combine {
        Combine::FuseOutputs => (
            scenario.fusion_overhead_s,
            steps.iter().map(|s| s.latency.total).fold(0.0, f64::max),
        ),
        Combine::Single | Combine::Sequence => (0.0, steps.iter().map(|s| s.latency.total).sum()),
    };
    Ok(EndToEnd {
        combine: plan.combine,
        planning_s,
        steps,
        fusion_s,
        total_s: planning_s + work + fusion_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{InputSource, PlanStep};

    // Slow edge and instant links: client-only wins every step and the
    // planning term is zero, so step latencies are flops / 1e9 seconds.
    const CLIENT_BOUND: &str = r#"
name = "client-bound"
fusion_overhead_s = 0.1
[planning]
request_bytes = 0
reply_bytes = 0
advisor_s = 0.0
[[devices]]
id = "c"
tier = "client"
throughput = 1e9
[[devices]]
id = "e"
tier = "edge"
throughput = 1.0
[links.client_edge_up]
rate = 1e15
[links.client_edge_down]
rate = 1e15
[links.edge_cloud_up]
rate = 1e15
[links.edge_cloud_down]
rate = 1e15
[planner]
sensors = ["wifi", "speaker"]
solvable_tasks = ["mood_from_traffic", "mood_from_physio"]
[[models]]
id = "one_second"
task_kind = "mood_from_traffic"
param_count = 10
input_bytes = 100
layers = [{ flops = 1000000000, out_feature_bytes = 4 }]
[[models]]
id = "three_seconds"
task_kind = "mood_from_physio"
param_count = 10
input_bytes = 100
layers = [{ flops = 3000000000, out_feature_bytes = 4 }]
"#;

    fn step(task: TaskKind, model: &str, input: InputSource) -> PlanStep {
        PlanStep {
            task_kind: task,
            model_id: model.into(),
            input_source: input,
        }
    }

    #[test]
    fn fused_steps_take_the_max_plus_fusion() {
        let scenario = Scenario::from_toml(CLIENT_BOUND).unwrap();
        let plan = TaskPlan {
            combine: Combine::FuseOutputs,
            steps: vec![
                step(TaskKind::MoodFromTraffic, "one_second", InputSource::Sensor("wifi".into())),
                step(TaskKind::MoodFromPhysio, "three_seconds", InputSource::Sensor("speaker".into())),
            ],
        };
        let report = emit_end_to_end(&plan, &scenario).unwrap();
        assert_eq!(report.planning_s, 0.0);
        assert!(report.steps.iter().all(|s| s.scheme == SchemeKind::ClientOnly));
        assert_eq!(report.steps[0].latency.total, 1.0);
        assert_eq!(report.steps[1].latency.total, 3.0);
        assert!((report.total_s - 3.1).abs() < 1e-12);
    }

    #[test]
    fn single_step_matches_best_partition() {
        let scenario = Scenario::bundled();
        let vit = scenario.model("vit").unwrap();
        let plan = TaskPlan {
            combine: Combine::Single,
            steps: vec![step(TaskKind::ImageClassification, "vit", InputSource::UserData)],
        };
        let report = emit_end_to_end(&plan, &scenario).unwrap();
        let best = best_partition(vit, &scenario);
        assert_eq!(report.steps[0].scheme, SchemeKind::CoInference);
        assert_eq!(report.steps[0].partition, best);
        assert!((report.total_s - best.latency.total).abs() < 1e-12);
    }

    #[test]
    fn sequence_totals_add() {
        let scenario = Scenario::bundled();
        let single = |task: TaskKind, model: &str| {
            let plan = TaskPlan {
                combine: Combine::Single,
                steps: vec![step(task, model, InputSource::UserData)],
            };
            emit_end_to_end(&plan, &scenario).unwrap()
        };
        let a = single(TaskKind::PoseDetection, "openpose");
        let b = single(TaskKind::PoseToImage, "controlnet");
        let plan = TaskPlan {
            combine: Combine::Sequence,
            steps: vec![
                step(TaskKind::PoseDetection, "openpose", InputSource::UserData),
                step(TaskKind::PoseToImage, "controlnet", InputSource::PreviousStep),
            ],
        };
        let both = emit_end_to_end(&plan, &scenario).unwrap();
        let expected = a.total_s + b.total_s - both.planning_s;
        assert!((both.total_s - expected).abs() < 1e-12);
        assert_eq!(both.fusion_s, 0.0);
    }

    #[test]
    fn unknown_model_is_unresolvable() {
        let scenario = Scenario::bundled();
        let plan = TaskPlan {
            combine: Combine::Single,
            steps: vec![step(TaskKind::Vqa, "vit", InputSource::UserData)],
        };
        assert!(matches!(
            emit_end_to_end(&plan, &scenario),
            Err(EndToEndError::UnresolvableStep { index: 0, .. })
        ));
    }
}
