//! Rule-table backend. Rules are tried in file order; the first rule whose
//! role and schema match the request and whose pattern matches the rendered
//! prompt supplies the response.
//!
//! Rule file (JSON Lines, one rule per line):
//!
//! ```text
//! {"role":"planner","match":"goal: count orders","response":{...}}
//! {"role":"critic","regex":"(?s)FINAL PAGE: (?P<page>\\S+)","response":{...,"justification":"reached ${page}"}}
//! {"role":"planner","regex":"CURRENT PLAN: (?P<plan>\\{.*\\})","response_capture":"plan"}
//! {"role":"actor","fallback":true,"response":{"candidates":[]}}
//! ```
//!
//! `${name}` inside template strings expands to a regex capture.
//! `response_capture` parses a capture group as the JSON response.

use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;

use super::schema::{validate, SchemaId};
use super::{
    estimate_tokens, BackendError, GenerationRequest, GenerationResponse, PolicyBackend, RoleTag,
    Usage,
};

#[derive(Debug, Clone)]
pub enum RulePattern {
    Substring(String),
    Regex(Regex),
    Always,
}

#[derive(Debug, Clone)]
pub enum ScriptedResponse {
    Template(Value),
    Capture(String),
}

#[derive(Debug, Clone)]
pub struct ScriptedRule {
    pub role: RoleTag,
    pub schema: SchemaId,
    pub pattern: RulePattern,
    pub response: ScriptedResponse,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleLine {
    role: RoleTag,
    #[serde(default)]
    schema: Option<SchemaId>,
    #[serde(default, rename = "match")]
    substring: Option<String>,
    #[serde(default)]
    regex: Option<String>,
    #[serde(default)]
    fallback: bool,
    #[serde(default)]
    response: Option<Value>,
    #[serde(default)]
    response_capture: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    comment: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedRuleSet {
    pub rules: Vec<ScriptedRule>,
    pub fallbacks: Vec<ScriptedRule>,
}

impl ScriptedRuleSet {
    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        let mut set = ScriptedRuleSet::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with("//") {
                continue;
            }
            let err = |d: String| BackendError::Load(format!("rule line {}: {d}", n + 1));
            let raw: RuleLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let schema = raw.schema.unwrap_or_else(|| raw.role.default_schema());
            let pattern = match (&raw.substring, &raw.regex, raw.fallback) {
                (Some(s), None, false) => RulePattern::Substring(s.clone()),
                (None, Some(r), false) => {
                    RulePattern::Regex(Regex::new(r).map_err(|e| err(e.to_string()))?)
                }
                (None, None, true) => RulePattern::Always,
                _ => {
                    return Err(err(
                        "exactly one of match, regex, fallback is required".into()
                    ))
                }
            };
            let response = match (raw.response, raw.response_capture) {
                (Some(v), None) => {
                    if !template_has_placeholders(&v) {
                        validate(schema, &v)
                            .map_err(|e| err(format!("template fails {schema}: {e}")))?;
                    }
                    ScriptedResponse::Template(v)
                }
                (None, Some(c)) if matches!(pattern, RulePattern::Regex(_)) => {
                    ScriptedResponse::Capture(c)
                }
                _ => {
                    return Err(err(
                        "need either response, or response_capture with a regex".into(),
                    ))
                }
            };
            let rule = ScriptedRule {
                role: raw.role,
                schema,
                pattern,
                response,
            };
            if raw.fallback {
                set.fallbacks.push(rule);
            } else {
                set.rules.push(rule);
            }
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Load(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&text)
    }

    pub fn merge(mut self, other: ScriptedRuleSet) -> Self {
        self.rules.extend(other.rules);
        self.fallbacks.extend(other.fallbacks);
        self
    }

    fn respond(&self, request: &GenerationRequest, prompt: &str) -> Result<Value, BackendError> {
        let wanted = |r: &&ScriptedRule| {
            r.role == request.role_tag && r.schema == request.response_schema_id
        };
        for rule in self.rules.iter().filter(wanted) {
            match &rule.pattern {
                RulePattern::Substring(s) if prompt.contains(s.as_str()) => {
                    return instantiate(&rule.response, None, request.response_schema_id)
                }
                RulePattern::Regex(re) => {
                    if let Some(caps) = re.captures(prompt) {
                        return instantiate(
                            &rule.response,
                            Some(&caps),
                            request.response_schema_id,
                        );
                    }
                }
                RulePattern::Always => {
                    return instantiate(&rule.response, None, request.response_schema_id)
                }
                _ => {}
            }
        }
        match self.fallbacks.iter().find(wanted) {
            Some(rule) => instantiate(&rule.response, None, request.response_schema_id),
            None => Err(BackendError::NoMatchingRule {
                role: request.role_tag,
                schema: request.response_schema_id,
            }),
        }
    }
}

fn template_has_placeholders(v: &Value) -> bool {
    match v {
        Value::String(s) => s.contains("${"),
        Value::Array(a) => a.iter().any(template_has_placeholders),
        Value::Object(o) => o.values().any(template_has_placeholders),
        _ => false,
    }
}

fn expand(v: &Value, caps: &regex::Captures<'_>) -> Value {
    match v {
        Value::String(s) if s.contains("${") => {
            let mut out = String::new();
            caps.expand(s, &mut out);
            Value::String(out)
        }
        Value::Array(a) => Value::Array(a.iter().map(|x| expand(x, caps)).collect()),
        Value::Object(o) => Value::Object(
            o.iter()
                .map(|(k, x)| (k.clone(), expand(x, caps)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn instantiate(
    response: &ScriptedResponse,
    caps: Option<&regex::Captures<'_>>,
    schema: SchemaId,
) -> Result<Value, BackendError> {
    let value = match (response, caps) {
        (ScriptedResponse::Template(t), Some(c)) => expand(t, c),
        (ScriptedResponse::Template(t), None) => t.clone(),
        (ScriptedResponse::Capture(name), Some(c)) => {
            let text = c.name(name).map(|m| m.as_str()).unwrap_or("");
            serde_json::from_str(text).map_err(|e| BackendError::SchemaViolation {
                schema,
                attempts: 1,
                detail: format!("captured '{name}' is not JSON: {e}"),
            })?
        }
        (ScriptedResponse::Capture(_), None) => unreachable!("capture rules always carry a regex"),
    };
    validate(schema, &value).map_err(|detail| BackendError::SchemaViolation {
        schema,
        attempts: 1,
        detail,
    })?;
    Ok(value)
}

/// Deterministic backend driven by a [`ScriptedRuleSet`].
pub struct ScriptedBackend {
    id: String,
    rules: ScriptedRuleSet,
}

impl ScriptedBackend {
    pub fn new(rules: ScriptedRuleSet) -> Self {
        ScriptedBackend {
            id: "scripted".into(),
            rules,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn from_jsonl(text: &str) -> Result<Self, BackendError> {
        Ok(Self::new(ScriptedRuleSet::from_jsonl(text)?))
    }
}

impl PolicyBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        request.validate()?;
        let prompt = request.render();
        let parsed = self.rules.respond(request, &prompt)?;
        let text = serde_json::to_string(&parsed).expect("json value serializes");
        Ok(GenerationResponse {
            usage: Usage {
                prompt_tokens: estimate_tokens(&prompt),
                completion_tokens: estimate_tokens(&text),
            },
            text,
            parsed,
            backend_id: self.id.clone(),
        })
    }
}
