//! Request planning: context assembly, plan resolution and the planner
//! evaluation harness.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::advisor::{Advisor, AdvisorError, PlanDraft, ReplyBody, ReplyKind};
use crate::registry::{candidates_for, Scenario, TaskKind};

const DEMONSTRATIONS_HEADER: &str = "### Demonstrations";
const HISTORY_HEADER: &str = "### History";
const REQUEST_HEADER: &str = "### Request";

/// Where a plan step reads its input from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InputSource {
    UserData,
    PreviousStep,
    Sensor(String),
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::UserData => f.write_str("user_data"),
            InputSource::PreviousStep => f.write_str("previous_step"),
            InputSource::Sensor(name) => write!(f, "sensor:{name}"),
        }
    }
}

impl FromStr for InputSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "user_data" | "user" => Ok(InputSource::UserData),
            "previous_step" | "previous" => Ok(InputSource::PreviousStep),
            other => match other.strip_prefix("sensor:") {
                Some(name) if !name.trim().is_empty() => Ok(InputSource::Sensor(name.trim().to_string())),
                _ => Err(format!("unknown input source {other:?}")),
            },
        }
    }
}

impl Serialize for InputSource {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InputSource {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Single,
    Sequence,
    FuseOutputs,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Single => "single",
            Combine::Sequence => "sequence",
            Combine::FuseOutputs => "fuse_outputs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub task_kind: TaskKind,
    pub model_id: String,
    pub input_source: InputSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskPlan {
    pub combine: Combine,
    pub steps: Vec<PlanStep>,
}

impl TaskPlan {
    /// Checks the structural invariants that do not need a scenario.
    pub fn check_shape(&self) -> Result<(), String> {
        if self.steps.is_empty() {
            return Err("plan has no steps".into());
        }
        match self.combine {
            Combine::Single if self.steps.len() != 1 => {
                Err(format!("single plan has {} steps", self.steps.len()))
            }
            Combine::Sequence => {
                for (i, pair) in self.steps.windows(2).enumerate() {
                    let (from, to) = (&pair[0], &pair[1]);
                    if to.input_source != InputSource::PreviousStep {
                        return Err(format!("sequence step {} does not consume the previous step", i + 1));
                    }
                    if !from.task_kind.output_kind().compatible(to.task_kind.input_kind()) {
                        return Err(format!(
                            "sequence step {} ({}) cannot consume the output of {}",
                            i + 1,
                            to.task_kind,
                            from.task_kind
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Wire form of this plan, as used in demonstrations.
    pub fn to_draft(&self) -> PlanDraft {
        PlanDraft {
            tasks: self
                .steps
                .iter()
                .map(|s| crate::advisor::DraftStep {
                    task: s.task_kind.clone(),
                    model: Some(s.model_id.clone()),
                    input: Some(s.input_source.clone()),
                })
                .collect(),
            combine: Some(self.combine),
        }
    }

    pub fn first_task(&self) -> &TaskKind {
        &self.steps[0].task_kind
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub request: String,
    pub plan: TaskPlan,
}

/// Vendor-supplied part of the planning context.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrefixSpec {
    #[serde(default)]
    pub sensors: Vec<String>,
    #[serde(default)]
    pub solvable_tasks: Vec<TaskKind>,
    #[serde(default)]
    pub demonstrations: Vec<Demonstration>,
}

impl PrefixSpec {
    pub(crate) fn validate(&self, scenario: &Scenario) -> Result<(), (String, String)> {
        for (i, demo) in self.demonstrations.iter().enumerate() {
            let field = format!("demonstrations[{i}]");
            demo.plan.check_shape().map_err(|r| (format!("{field}.plan"), r))?;
            for step in &demo.plan.steps {
                if !self.solvable_tasks.contains(&step.task_kind) {
                    return Err((
                        format!("{field}.plan"),
                        format!("task {} is not in solvable_tasks", step.task_kind),
                    ));
                }
                if let InputSource::Sensor(name) = &step.input_source {
                    if !self.sensors.contains(name) {
                        return Err((format!("{field}.plan"), format!("unknown sensor {name:?}")));
                    }
                }
                if scenario.model(&step.model_id).is_none() {
                    return Err((format!("{field}.plan"), format!("unknown model {:?}", step.model_id)));
                }
            }
        }
        Ok(())
    }
}

/// Keyword rule for [`crate::advisor::KeywordAdvisor`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub keywords: Vec<String>,
    pub plan: PlanDraft,
}

impl KeywordRule {
    pub fn new<S: Into<String>>(keywords: impl IntoIterator<Item = S>, plan: PlanDraft) -> Self {
        KeywordRule {
            keywords: keywords.into_iter().map(Into::into).collect(),
            plan,
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "(none)".into();
    }
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// Serialized vendor prefix, without demonstrations.
pub fn prefix_text(prefix: &PrefixSpec) -> String {
    format!(
        "You are the task planner of a cloud-edge-client AI system. Decompose the user's request \
         into tasks that the available models can solve.\n\
         Available sensors: {}\n\
         Solvable tasks: {}\n\
         Answer with one JSON object: {{\"tasks\": [{{\"task\": <task>, \"model\": <model id, optional>, \
         \"input\": <user_data | previous_step | sensor:NAME, optional>}}], \"combine\": <single | sequence | fuse_outputs>}}.\n",
        join(&prefix.sensors),
        join(&prefix.solvable_tasks),
    )
}

/// Assembles the advisor context: prefix, demonstrations in order, history
/// oldest first, then the request. Empty sections are omitted.
pub fn build_context(prefix: &PrefixSpec, request: &str, history: &[String]) -> String {
    let mut out = prefix_text(prefix);
    if !prefix.demonstrations.is_empty() {
        out.push('\n');
        out.push_str(DEMONSTRATIONS_HEADER);
        out.push('\n');
        for demo in &prefix.demonstrations {
            let plan = serde_json::to_string(&demo.plan.to_draft()).expect("plan serializes");
            out.push_str(&format!("Request: {}\nPlan: {}\n", demo.request, plan));
        }
    }
    if !history.is_empty() {
        out.push('\n');
        out.push_str(HISTORY_HEADER);
        out.push('\n');
        for h in history {
            out.push_str(&format!("- {h}\n"));
        }
    }
    out.push('\n');
    out.push_str(REQUEST_HEADER);
    out.push('\n');
    out.push_str(request);
    out
}

/// The request part of a context built by [`build_context`]; the whole text
/// when there is no request marker.
pub fn request_section(context: &str) -> &str {
    let marker = format!("\n{REQUEST_HEADER}\n");
    match context.rfind(&marker) {
        Some(at) => &context[at + marker.len()..],
        None => context,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlanError {
    #[error("advisor unreachable: {0}")]
    AdvisorUnreachable(AdvisorError),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
}

impl From<AdvisorError> for PlanError {
    fn from(e: AdvisorError) -> Self {
        match e {
            AdvisorError::Timeout | AdvisorError::Transport(_) => PlanError::AdvisorUnreachable(e),
            AdvisorError::MalformedReply(raw) => PlanError::InvalidPlan(format!("malformed reply: {raw:?}")),
            AdvisorError::NoMatchingRule => PlanError::InvalidPlan("no advisor rule matches the request".into()),
        }
    }
}

/// Resolves an advisor draft against the scenario.
///
/// Missing models default to the first candidate by id; missing inputs
/// default to the user's data for the first step and the previous step
/// after that (sequences) or the user's data (fused plans). A draft with
/// several steps and no `combine` is a sequence.
pub fn resolve(draft: &PlanDraft, scenario: &Scenario) -> Result<TaskPlan, PlanError> {
    let invalid = |m: String| PlanError::InvalidPlan(m);
    if draft.tasks.is_empty() {
        return Err(invalid("plan has no steps".into()));
    }
    let combine = draft.combine.unwrap_or(if draft.tasks.len() == 1 {
        Combine::Single
    } else {
        Combine::Sequence
    });
    let prefix = &scenario.planner;
    let mut steps = Vec::with_capacity(draft.tasks.len());
    for (i, step) in draft.tasks.iter().enumerate() {
        if !prefix.solvable_tasks.contains(&step.task) {
            return Err(invalid(format!("task {} is not solvable here", step.task)));
        }
        let candidates = candidates_for(&step.task, scenario);
        let model_id = match &step.model {
            Some(id) => candidates
                .iter()
                .find(|m| &m.id == id)
                .map(|m| m.id.clone())
                .ok_or_else(|| invalid(format!("model {id:?} cannot solve {}", step.task)))?,
            None => candidates
                .first()
                .map(|m| m.id.clone())
                .ok_or_else(|| invalid(format!("no model registered for {}", step.task)))?,
        };
        let input_source = match &step.input {
            Some(InputSource::Sensor(name)) if !prefix.sensors.contains(name) => {
                return Err(invalid(format!("unknown sensor {name:?}")));
            }
            Some(src) => src.clone(),
            None if i > 0 && combine == Combine::Sequence => InputSource::PreviousStep,
            None => InputSource::UserData,
        };
        steps.push(PlanStep {
            task_kind: step.task.clone(),
            model_id,
            input_source,
        });
    }
    let plan = TaskPlan { combine, steps };
    plan.check_shape().map_err(invalid)?;
    Ok(plan)
}

pub fn plan(request: &str, scenario: &Scenario, advisor: &dyn Advisor) -> Result<TaskPlan, PlanError> {
    plan_with_history(request, &[], scenario, advisor)
}

pub fn plan_with_history(
    request: &str,
    history: &[String],
    scenario: &Scenario,
    advisor: &dyn Advisor,
) -> Result<TaskPlan, PlanError> {
    let context = build_context(&scenario.planner, request, history);
    let reply = advisor.ask(&context, ReplyKind::Plan)?;
    match reply.body {
        ReplyBody::Plan(draft) => resolve(&draft, scenario),
        ReplyBody::NoChange => Err(PlanError::InvalidPlan("advisor returned no plan".into())),
        ReplyBody::FlProposal(_) => Err(PlanError::InvalidPlan("advisor returned a training patch".into())),
    }
}

/// One labelled request. `steps` is the gold step sequence used in strict
/// mode; when absent it is the single `label`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRequest {
    pub request: String,
    pub label: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<TaskKind>>,
}

impl LabeledRequest {
    pub fn new(request: impl Into<String>, label: TaskKind) -> Self {
        LabeledRequest {
            request: request.into(),
            label,
            steps: None,
        }
    }

    fn gold_steps(&self) -> Vec<TaskKind> {
        self.steps.clone().unwrap_or_else(|| vec![self.label.clone()])
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads a JSON Lines dataset; blank lines and `#` comments are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<LabeledRequest>, DatasetError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DatasetError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledRequest>, DatasetError> {
    parse_dataset(&std::fs::read_to_string(path)?)
}

/// The bundled synthetic labelled request set (60 requests, 20 per class).
pub fn bundled_dataset() -> Vec<LabeledRequest> {
    parse_dataset(include_str!("../data/requests.jsonl")).expect("bundled dataset parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlannerMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean wall time of a full `plan()` call, seconds.
    pub mean_latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: PlannerMetrics,
    /// Predicted class per request; `None` when planning failed or, in strict
    /// mode, when the step sequence did not match.
    pub predictions: Vec<Option<TaskKind>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("dataset is empty")]
    EmptyDataset,
}

/// Accuracy and macro-F1 over the gold classes.
///
/// A `None` prediction is wrong for every class. Classes are visited in
/// sorted order so the result does not depend on dataset order.
pub fn score(gold: &[TaskKind], predicted: &[Option<TaskKind>]) -> (f64, f64) {
    assert_eq!(gold.len(), predicted.len(), "one prediction per gold label");
    if gold.is_empty() {
        return (0.0, 0.0);
    }
    let correct = gold
        .iter()
        .zip(predicted)
        .filter(|(g, p)| p.as_ref() == Some(*g))
        .count();
    let accuracy = correct as f64 / gold.len() as f64;
    let classes: BTreeSet<&TaskKind> = gold.iter().collect();
    let mut f1_sum = 0.0;
    for class in &classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (g, p) in gold.iter().zip(predicted) {
            let is_gold = g == *class;
            let is_pred = p.as_ref() == Some(*class);
            match (is_gold, is_pred) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        f1_sum += 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    }
    (accuracy, f1_sum / classes.len() as f64)
}

/// Runs `plan()` on every request and scores the first step's task against
/// the gold label. In `strict` mode the whole step sequence must match.
pub fn evaluate_planner(
    dataset: &[LabeledRequest],
    scenario: &Scenario,
    advisor: &dyn Advisor,
    strict: bool,
) -> Result<Evaluation, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut predictions = Vec::with_capacity(dataset.len());
    let mut elapsed = 0.0;
    for item in dataset {
        let started = Instant::now();
        let outcome = plan(&item.request, scenario, advisor);
        elapsed += started.elapsed().as_secs_f64();
        let predicted = outcome.ok().and_then(|p| {
            if strict {
                let kinds: Vec<TaskKind> = p.steps.iter().map(|s| s.task_kind.clone()).collect();
                (kinds == item.gold_steps()).then(|| p.first_task().clone())
            } else {
                Some(p.first_task().clone())
            }
        });
        predictions.push(predicted);
    }
    let gold: Vec<TaskKind> = dataset.iter().map(|d| d.label.clone()).collect();
    let (accuracy, macro_f1) = score(&gold, &predictions);
    Ok(Evaluation {
        metrics: PlannerMetrics {
            accuracy,
            macro_f1,
            mean_latency: elapsed / dataset.len() as f64,
        },
        predictions,
    })
}
