//! Uniform structured-generation interface used by every model-backed
//! component (planner, actor, critic, summarizer, explorers).
//!
//! Three implementations ship: [`ScriptedBackend`] (rule table, fully
//! deterministic), [`ReplayBackend`] (replays a recorded session), and
//! [`RemoteBackend`] (OpenAI-compatible chat-completions endpoint).
//! [`record_session`] wraps any backend and appends every call to a JSON
//! Lines sink that [`ReplayBackend`] can replay.

mod remote;
mod replay;
pub mod schema;
mod scripted;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use remote::{RemoteBackend, RemoteConfig, API_KEY_ENV};
pub use replay::{record_session, RecordedCall, RecordingBackend, ReplayBackend};
pub use schema::SchemaId;
pub use scripted::{RulePattern, ScriptedBackend, ScriptedResponse, ScriptedRule, ScriptedRuleSet};

/// Re-asks after a schema violation before giving up.
pub const DEFAULT_REASKS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Planner,
    Actor,
    Critic,
    Summarizer,
    Explorer,
    Digest,
}

impl RoleTag {
    pub const ALL: [RoleTag; 6] = [
        RoleTag::Planner,
        RoleTag::Actor,
        RoleTag::Critic,
        RoleTag::Summarizer,
        RoleTag::Explorer,
        RoleTag::Digest,
    ];

    pub fn default_temperature(self) -> f64 {
        match self {
            RoleTag::Planner => 0.2,
            RoleTag::Actor => 0.7,
            RoleTag::Critic => 0.0,
            RoleTag::Summarizer => 0.2,
            RoleTag::Explorer => 0.7,
            RoleTag::Digest => 0.2,
        }
    }

    /// Schema a role produces unless a rule or request says otherwise.
    pub fn default_schema(self) -> SchemaId {
        match self {
            RoleTag::Planner => SchemaId::PlanV1,
            RoleTag::Actor => SchemaId::CandidatesV1,
            RoleTag::Critic => SchemaId::AssessmentV1,
            RoleTag::Summarizer => SchemaId::SummaryV1,
            RoleTag::Explorer => SchemaId::ExploreStepV1,
            RoleTag::Digest => SchemaId::DigestV1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Planner => "planner",
            RoleTag::Actor => "actor",
            RoleTag::Critic => "critic",
            RoleTag::Summarizer => "summarizer",
            RoleTag::Explorer => "explorer",
            RoleTag::Digest => "digest",
        }
    }
}

impl fmt::Display for RoleTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role_tag: RoleTag,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub response_schema_id: SchemaId,
}

impl GenerationRequest {
    /// A system + user request at the role's default temperature.
    pub fn new(
        role: RoleTag,
        schema: SchemaId,
        system: impl Into<String>,
        user: impl Into<String>,
    ) -> Self {
        GenerationRequest {
            role_tag: role,
            messages: vec![
                Message {
                    speaker: Speaker::System,
                    text: system.into(),
                },
                Message {
                    speaker: Speaker::User,
                    text: user.into(),
                },
            ],
            temperature: role.default_temperature(),
            max_tokens: 1024,
            response_schema_id: schema,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        match self.messages.first() {
            None => return bad("messages must be non-empty"),
            Some(m) if m.speaker != Speaker::System => {
                return bad("first message must be a system message")
            }
            _ => {}
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must lie in [0, 2]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// Flat text form of the prompt; scripted rules match against this.
    pub fn render(&self) -> String {
        let mut out = format!(
            "ROLE: {}\nSCHEMA: {}\n",
            self.role_tag, self.response_schema_id
        );
        for m in &self.messages {
            out.push_str(match m.speaker {
                Speaker::System => "[system]\n",
                Speaker::User => "[user]\n",
            });
            out.push_str(&m.text);
            if !m.text.ends_with('\n') {
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Whitespace token count, the deterministic usage estimate for offline backends.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub parsed: Value,
    pub backend_id: String,
    pub usage: Usage,
}

impl GenerationResponse {
    pub fn decode<T: DeserializeOwned>(&self, schema: SchemaId) -> Result<T, BackendError> {
        serde_json::from_value(self.parsed.clone()).map_err(|e| BackendError::SchemaViolation {
            schema,
            attempts: 1,
            detail: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum BackendError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("output failed {schema} validation after {attempts} attempt(s): {detail}")]
    SchemaViolation {
        schema: SchemaId,
        attempts: u32,
        detail: String,
    },
    #[error("backend unavailable after {attempts} attempt(s): {detail}")]
    BackendUnavailable { attempts: u32, detail: String },
    #[error("no scripted rule matches role '{role}' ({schema})")]
    NoMatchingRule { role: RoleTag, schema: SchemaId },
    #[error("replay mismatch at call {index}: {detail}")]
    ReplayMismatch { index: usize, detail: String },
    #[error("replay exhausted at call {index}")]
    ReplayExhausted { index: usize },
    #[error("recording sink write failed: {0}")]
    SinkWriteFailure(String),
    #[error("{0}")]
    Load(String),
}

pub trait PolicyBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

impl<T: PolicyBackend + ?Sized> PolicyBackend for &T {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

/// Dispatches by role, falling back to a default backend.
pub struct RoutedBackend {
    default: Arc<dyn PolicyBackend>,
    roles: BTreeMap<RoleTag, Arc<dyn PolicyBackend>>,
}

impl RoutedBackend {
    pub fn new(default: Arc<dyn PolicyBackend>) -> Self {
        RoutedBackend {
            default,
            roles: BTreeMap::new(),
        }
    }

    pub fn route(mut self, role: RoleTag, backend: Arc<dyn PolicyBackend>) -> Self {
        self.roles.insert(role, backend);
        self
    }
}

impl PolicyBackend for RoutedBackend {
    fn backend_id(&self) -> &str {
        "routed"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.roles
            .get(&request.role_tag)
            .unwrap_or(&self.default)
            .generate(request)
    }
}

/// Counts calls and tokens flowing through a backend.
pub struct MeteredBackend<B> {
    inner: B,
    calls: AtomicU64,
    tokens: AtomicU64,
}

impl<B: PolicyBackend> MeteredBackend<B> {
    pub fn new(inner: B) -> Self {
        MeteredBackend {
            inner,
            calls: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn tokens(&self) -> u64 {
        self.tokens.load(Ordering::SeqCst)
    }
}

impl<B: PolicyBackend> PolicyBackend for MeteredBackend<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.generate(request)?;
        self.tokens.fetch_add(out.usage.total(), Ordering::SeqCst);
        Ok(out)
    }
}

/// Generates and decodes into the schema's typed form in one call.
pub fn generate_typed<T: DeserializeOwned>(
    backend: &dyn PolicyBackend,
    request: &GenerationRequest,
) -> Result<T, BackendError> {
    let response = backend.generate(request)?;
    response.decode(request.response_schema_id)
}
