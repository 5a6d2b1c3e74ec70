//! The advisor: anything that turns a text context into a structured reply.
//!
//! Offline backends ([`KeywordAdvisor`], [`ScriptedAdvisor`], [`FnAdvisor`])
//! are deterministic. [`RemoteAdvisor`] speaks the common chat-completion
//! HTTP protocol.
//!
//! # Reply format
//!
//! Replies are free text containing one JSON object. Plans look like
//!
//! ```json
//! {"tasks": [{"task": "pose_detection", "model": "openpose", "input": "user_data"},
//!            {"task": "pose_to_image"}],
//!  "combine": "sequence"}
//! ```
//!
//! where `model`, `input` and `combine` are optional. Training-configuration
//! proposals look like `{"patch": {"optimizer": "adam", "lr": 0.01}}`. The
//! bare token `NO_CHANGE` means the advisor has nothing further to propose.
//! Surrounding prose is ignored, as are unknown fields.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::fedsim::ConfigPatch;
use crate::planner::{request_section, Combine, InputSource, KeywordRule};
use crate::registry::TaskKind;

/// Token an advisor emits when it has no modification to propose.
pub const NO_CHANGE: &str = "NO_CHANGE";

/// Environment variable holding the bearer token for [`RemoteAdvisor`].
pub const API_KEY_ENV: &str = "EDGEPLAN_API_KEY";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdvisorError {
    #[error("advisor timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed advisor reply: {0:?}")]
    MalformedReply(String),
    #[error("no advisor rule matches the request")]
    NoMatchingRule,
}

/// What the caller expects the advisor to answer with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplyKind {
    Plan,
    FlProposal,
}

/// One step of a plan as the advisor states it, before model resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftStep {
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSource>,
}

impl DraftStep {
    pub fn task(task: TaskKind) -> Self {
        DraftStep {
            task,
            model: None,
            input: None,
        }
    }
}

/// An unresolved plan; see [`crate::planner::resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDraft {
    pub tasks: Vec<DraftStep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combine: Option<Combine>,
}

impl PlanDraft {
    pub fn single(task: TaskKind) -> Self {
        PlanDraft {
            tasks: vec![DraftStep::task(task)],
            combine: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplyBody {
    Plan(PlanDraft),
    FlProposal(ConfigPatch),
    NoChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvisorReply {
    pub body: ReplyBody,
    pub raw_text: String,
}

#[derive(Serialize, Deserialize)]
struct WirePatch {
    patch: ConfigPatch,
}

impl ReplyBody {
    /// Canonical wire text for this reply.
    pub fn to_wire(&self) -> String {
        match self {
            ReplyBody::Plan(draft) => serde_json::to_string(draft).expect("plan serializes"),
            ReplyBody::FlProposal(patch) => serde_json::to_string(&WirePatch {
                patch: patch.clone(),
            })
            .expect("patch serializes"),
            ReplyBody::NoChange => NO_CHANGE.to_string(),
        }
    }

    pub fn into_reply(self) -> AdvisorReply {
        let raw_text = self.to_wire();
        AdvisorReply {
            body: self,
            raw_text,
        }
    }
}

/// Extracts a reply from free text.
///
/// Scans for the first JSON object carrying the key the caller expects
/// (`tasks` or `patch`). If none is present, a `NO_CHANGE` token yields
/// [`ReplyBody::NoChange`]. Anything else is [`AdvisorError::MalformedReply`].
pub fn parse_reply(raw_text: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError> {
    let key = match expect {
        ReplyKind::Plan => "tasks",
        ReplyKind::FlProposal => "patch",
    };
    let malformed = || AdvisorError::MalformedReply(raw_text.to_string());
    for (start, _) in raw_text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&raw_text[start..]).into_iter::<serde_json::Value>();
        let Some(Ok(value)) = stream.next() else {
            continue;
        };
        if !value.as_object().is_some_and(|o| o.contains_key(key)) {
            continue;
        }
        let body = match expect {
            ReplyKind::Plan => {
                let draft: PlanDraft = serde_json::from_value(value).map_err(|_| malformed())?;
                if draft.tasks.is_empty() {
                    return Err(malformed());
                }
                ReplyBody::Plan(draft)
            }
            ReplyKind::FlProposal => {
                let wire: WirePatch = serde_json::from_value(value).map_err(|_| malformed())?;
                ReplyBody::FlProposal(wire.patch)
            }
        };
        return Ok(AdvisorReply {
            body,
            raw_text: raw_text.to_string(),
        });
    }
    if raw_text.contains(NO_CHANGE) {
        return Ok(AdvisorReply {
            body: ReplyBody::NoChange,
            raw_text: raw_text.to_string(),
        });
    }
    Err(malformed())
}

/// A controller that answers a text context with a structured reply.
///
/// Implementations must be callable from several threads at once.
pub trait Advisor: Send + Sync {
    fn ask(&self, context: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError>;
}

/// Rule-based offline advisor. The first rule whose keywords all occur in
/// the request (case-insensitively) supplies the plan.
#[derive(Debug, Clone)]
pub struct KeywordAdvisor {
    rules: Vec<KeywordRule>,
}

pub fn keyword_mock_advisor(rules: Vec<KeywordRule>) -> KeywordAdvisor {
    KeywordAdvisor::new(rules)
}

impl KeywordAdvisor {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        let rules = rules
            .into_iter()
            .map(|mut r| {
                r.keywords = r.keywords.iter().map(|k| k.to_lowercase()).collect();
                r
            })
            .collect();
        KeywordAdvisor { rules }
    }

    pub fn matching_rule(&self, request: &str) -> Option<&KeywordRule> {
        let request = request.to_lowercase();
        self.rules
            .iter()
            .find(|r| r.keywords.iter().all(|k| request.contains(k.as_str())))
    }
}

impl Advisor for KeywordAdvisor {
    fn ask(&self, context: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError> {
        if expect == ReplyKind::FlProposal {
            return Ok(ReplyBody::NoChange.into_reply());
        }
        self.matching_rule(request_section(context))
            .map(|rule| ReplyBody::Plan(rule.plan.clone()).into_reply())
            .ok_or(AdvisorError::NoMatchingRule)
    }
}

/// Returns a fixed sequence of raw replies, one per call, then `NO_CHANGE`
/// forever.
///
/// The cursor is the only mutable state. Concurrent callers get replies in
/// an unspecified interleaving, so callers that care about order must not
/// share one instance.
#[derive(Debug)]
pub struct ScriptedAdvisor {
    replies: Vec<String>,
    cursor: Mutex<usize>,
}

impl ScriptedAdvisor {
    pub fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        ScriptedAdvisor {
            replies: replies.into_iter().map(Into::into).collect(),
            cursor: Mutex::new(0),
        }
    }
}

impl Advisor for ScriptedAdvisor {
    fn ask(&self, _context: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError> {
        let mut cursor = self.cursor.lock().unwrap_or_else(|p| p.into_inner());
        let Some(raw) = self.replies.get(*cursor) else {
            return Ok(ReplyBody::NoChange.into_reply());
        };
        *cursor += 1;
        parse_reply(raw, expect)
    }
}

/// Adapter for closures, handy for oracle and constant predictors.
pub struct FnAdvisor<F>(pub F);

impl<F> Advisor for FnAdvisor<F>
where
    F: Fn(&str, ReplyKind) -> Result<AdvisorReply, AdvisorError> + Send + Sync,
{
    fn ask(&self, context: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError> {
        (self.0)(context, expect)
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> f64 {
    1.0
}

/// Connection settings for a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    /// Base URL; requests go to `<endpoint>/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_backoff")]
    pub retry_backoff_s: f64,
}

impl RemoteSettings {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteSettings {
            endpoint: endpoint.into(),
            model: model.into(),
            timeout_s: default_timeout(),
            max_retries: default_retries(),
            temperature: 0.0,
            retry_backoff_s: default_backoff(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteAdvisor {
    settings: RemoteSettings,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReplyMessage,
}

#[derive(Deserialize)]
struct ChatReplyMessage {
    content: String,
}

enum Attempt {
    Retry(AdvisorError),
    Fatal(AdvisorError),
}

impl RemoteAdvisor {
    /// Builds a client; the API key is read from `EDGEPLAN_API_KEY`.
    pub fn new(settings: RemoteSettings) -> Result<Self, AdvisorError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(settings, key)
    }

    pub fn with_api_key(settings: RemoteSettings, api_key: Option<String>) -> Result<Self, AdvisorError> {
        if !(settings.timeout_s > 0.0 && settings.timeout_s.is_finite()) {
            return Err(AdvisorError::Transport("timeout must be > 0".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(settings.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(RemoteAdvisor {
            settings,
            api_key,
            agent,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.settings.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, context: &str) -> Result<String, Attempt> {
        let body = ChatRequest {
            model: &self.settings.model,
            messages: [ChatMessage {
                role: "user",
                content: context,
            }],
            temperature: self.settings.temperature,
        };
        let mut request = self.agent.post(&self.url());
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request.send_json(&body).map_err(|e| Attempt::Retry(transport(e)))?;
        let status = response.status();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Retry(transport(e)))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(AdvisorError::Transport(format!("HTTP {status}"))));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(AdvisorError::Transport(format!("HTTP {status}: {text}"))));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|_| Attempt::Fatal(AdvisorError::MalformedReply(text.clone())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or(Attempt::Fatal(AdvisorError::MalformedReply(text)))
    }
}

fn transport(e: ureq::Error) -> AdvisorError {
    match e {
        ureq::Error::Timeout(_) => AdvisorError::Timeout,
        other => AdvisorError::Transport(other.to_string()),
    }
}

impl Advisor for RemoteAdvisor {
    fn ask(&self, context: &str, expect: ReplyKind) -> Result<AdvisorReply, AdvisorError> {
        let mut attempt = 0;
        loop {
            match self.attempt(context) {
                Ok(content) => return parse_reply(&content, expect),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempt >= self.settings.max_retries {
                        return Err(e);
                    }
                    attempt += 1;
                    std::thread::sleep(Duration::from_secs_f64(self.settings.retry_backoff_s.max(0.0)));
                }
            }
        }
    }
}
