//! Client for an OpenAI-compatible `/chat/completions` endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::schema::{parse_json_text, validate};
use super::{
    estimate_tokens, BackendError, GenerationRequest, GenerationResponse, PolicyBackend, Speaker,
    Usage, DEFAULT_REASKS,
};

pub const API_KEY_ENV: &str = "ATLAS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_inflight: usize,
    pub reasks: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: API_KEY_ENV.into(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 250,
            max_inflight: 4,
            reasks: DEFAULT_REASKS,
        }
    }
}

struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GatePass<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap();
        }
        *used += 1;
        GatePass(self)
    }
}

struct GatePass<'a>(&'a Gate);

impl Drop for GatePass<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

pub struct RemoteBackend {
    id: String,
    config: RemoteConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteBackend {
    /// Builds a client; the bearer token is read from the configured
    /// environment variable once, here.
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Load(format!("http client: {e}")))?;
        Ok(RemoteBackend {
            id: format!("remote:{}", config.model),
            gate: Gate {
                used: Mutex::new(0),
                freed: Condvar::new(),
                cap: config.max_inflight.max(1),
            },
            config,
            api_key,
            client,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        )
    }

    fn post_once(&self, body: &Value) -> Result<Value, Failure> {
        let mut req = self
            .client
            .post(self.endpoint())
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .body(body.to_string())
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!(
                "HTTP {status}: {}",
                truncate(&text, 200)
            )));
        }
        serde_json::from_str(&text)
            .map_err(|e| Failure::Retryable(format!("response body is not JSON: {e}")))
    }

    /// One logical call with up to `max_retries` retries on transport failure.
    fn post_with_retries(&self, body: &Value) -> Result<Value, BackendError> {
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self
                    .config
                    .backoff_ms
                    .saturating_mul(1u64 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(detail)) => {
                    return Err(BackendError::BackendUnavailable {
                        attempts: attempt + 1,
                        detail,
                    })
                }
                Err(Failure::Retryable(detail)) => {
                    tracing::warn!(attempt = attempt + 1, %detail, "remote backend call failed");
                    last = detail;
                }
            }
        }
        Err(BackendError::BackendUnavailable {
            attempts,
            detail: last,
        })
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl PolicyBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let _pass = self.gate.acquire();
        let schema = request.response_schema_id;
        let mut messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.speaker {
                    Speaker::System => "system",
                    Speaker::User => "user",
                };
                json!({"role": role, "content": m.text})
            })
            .collect();
        messages.push(json!({
            "role": "system",
            "content": format!("Reply with a single JSON object of shape {}", schema.shape_hint()),
        }));
        let mut usage = Usage::default();
        let total = self.config.reasks + 1;
        let mut detail = String::new();
        for _ in 0..total {
            let body = json!({
                "model": self.config.model,
                "messages": messages,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "response_format": {"type": "json_object"},
            });
            let reply = self.post_with_retries(&body)?;
            let text = reply["choices"][0]["message"]["content"]
                .as_str()
                .unwrap_or_default()
                .to_string();
            match reply.get("usage") {
                Some(u) => {
                    usage.prompt_tokens += u["prompt_tokens"].as_u64().unwrap_or(0);
                    usage.completion_tokens += u["completion_tokens"].as_u64().unwrap_or(0);
                }
                None => usage.completion_tokens += estimate_tokens(&text),
            }
            let checked = parse_json_text(&text).and_then(|v| validate(schema, &v).map(|_| v));
            match checked {
                Ok(parsed) => {
                    return Ok(GenerationResponse {
                        text,
                        parsed,
                        backend_id: self.id.clone(),
                        usage,
                    });
                }
                Err(e) => {
                    tracing::warn!(%schema, error = %e, "remote output rejected, re-asking");
                    messages.push(json!({"role": "assistant", "content": text}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!("Your reply was rejected: {e}. Reply again with valid JSON for {schema}."),
                    }));
                    detail = e;
                }
            }
        }
        Err(BackendError::SchemaViolation {
            schema,
            attempts: total,
            detail,
        })
    }
}
