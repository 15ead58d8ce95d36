//! Deterministic simulated web sites: the POMDP the agent acts in.
//!
//! A [`SiteSpec`] is loaded from a `*.site.json` fixture and never mutated;
//! each episode owns an [`EnvHandle`] holding the hidden state (current page,
//! typed inputs, state fields, navigation history, hazard latch). The agent
//! only ever sees [`Observation`]s of the current page.

mod action;
mod site;
mod task;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use action::Action;
pub use site::{
    normalize_url_path, Element, ElementKind, HazardRef, Page, SiteSpec, TransitionRule,
};
pub use task::{
    answer_tokens, evaluate, load_tasks, load_tasks_json, MatchMode, SuccessCriterion, TaskSpec,
};

pub const FLASH_NOTHING_HAPPENED: &str = "nothing happened";
pub const FLASH_INVALID_FORMAT: &str = "invalid format";
pub const FLASH_BACK_UNAVAILABLE: &str = "back unavailable: the previous action cannot be undone";
pub const FLASH_NAVIGATION_BLOCKED: &str =
    "navigation blocked: the previous action cannot be undone";

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error at {path}: {detail}")]
    Validation { path: String, detail: String },
    #[error("task site '{task_site}' does not match site '{spec_site}'")]
    SiteMismatch {
        task_site: String,
        spec_site: String,
    },
    #[error("episode already terminated")]
    EpisodeTerminated,
    #[error("step budget of {0} exhausted")]
    StepBudgetExhausted(usize),
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    pub element_id: String,
    pub kind: ElementKind,
    pub label: String,
}

/// What the agent sees after each step: the current page only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub page_id: String,
    pub url: String,
    pub rendered_text: String,
    pub element_index: Vec<ElementRef>,
    pub step_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<String>,
}

impl Observation {
    /// Content digest of the observation (url + rendered text), used in logs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.url.as_bytes());
        h.update([0]);
        h.update(self.rendered_text.as_bytes());
        hex::encode(&h.finalize()[..8])
    }
}

/// Every action the page affords, in element order, plus `back` and `stop`.
/// Inputs get a `type` action with empty text for the caller to fill in.
pub fn available_actions(obs: &Observation) -> Vec<Action> {
    let mut out: Vec<Action> = obs
        .element_index
        .iter()
        .map(|e| {
            if e.kind.accepts_input() {
                Action::type_text(&e.element_id, "")
            } else {
                Action::click(&e.element_id)
            }
        })
        .collect();
    out.push(Action::Back);
    out.push(Action::stop(""));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvStepRecord {
    pub step: usize,
    pub observation_digest: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<String>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalState {
    pub page_id: String,
    pub fields: BTreeMap<String, String>,
    pub answer: Option<String>,
    pub stopped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub steps: Vec<EnvStepRecord>,
    pub outcome: FinalState,
}

/// Shared count of executed environment steps, for asserting that
/// simulation never touches the real environment.
#[derive(Debug, Clone, Default)]
pub struct StepCounter(Arc<AtomicU64>);

impl StepCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Single-episode environment state.
#[derive(Debug, Clone)]
pub struct EnvHandle {
    spec: Arc<SiteSpec>,
    page: String,
    inputs: BTreeMap<(String, String), String>,
    fields: BTreeMap<String, String>,
    history: Vec<String>,
    latched: bool,
    step_index: usize,
    max_steps: usize,
    terminated: bool,
    answer: Option<String>,
    log: Vec<EnvStepRecord>,
    counter: StepCounter,
}

impl EnvHandle {
    /// Starts an episode for `task` on `spec`.
    pub fn reset(spec: Arc<SiteSpec>, task: &TaskSpec) -> Result<(Self, Observation), EnvError> {
        if task.site_id != spec.site_id {
            return Err(EnvError::SiteMismatch {
                task_site: task.site_id.clone(),
                spec_site: spec.site_id.clone(),
            });
        }
        task.validate()?;
        Ok(Self::open(spec, task.max_steps))
    }

    /// Starts a task-free episode (used by exploration).
    pub fn open(spec: Arc<SiteSpec>, max_steps: usize) -> (Self, Observation) {
        let page = spec.start_page.clone();
        let fields = spec.initial_fields.clone();
        let env = EnvHandle {
            spec,
            page,
            inputs: BTreeMap::new(),
            fields,
            history: Vec::new(),
            latched: false,
            step_index: 0,
            max_steps: max_steps.max(1),
            terminated: false,
            answer: None,
            log: Vec::new(),
            counter: StepCounter::default(),
        };
        let obs = env.render(None);
        (env, obs)
    }

    pub fn with_counter(mut self, counter: StepCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn counter(&self) -> StepCounter {
        self.counter.clone()
    }

    pub fn spec(&self) -> &Arc<SiteSpec> {
        &self.spec
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    pub fn budget_exhausted(&self) -> bool {
        self.step_index >= self.max_steps
    }

    pub fn is_latched(&self) -> bool {
        self.latched
    }

    pub fn current_page(&self) -> &str {
        &self.page
    }

    pub fn fields(&self) -> &BTreeMap<String, String> {
        &self.fields
    }

    /// Current observation without a flash (does not advance time).
    pub fn observe(&self) -> Observation {
        self.render(None)
    }

    pub fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        if self.terminated {
            return Err(EnvError::EpisodeTerminated);
        }
        if self.budget_exhausted() {
            return Err(EnvError::StepBudgetExhausted(self.max_steps));
        }
        let before = self.render(None).digest();
        self.step_index += 1;
        self.counter.bump();
        let flash = self.apply(action);
        self.log.push(EnvStepRecord {
            step: self.step_index,
            observation_digest: before,
            action: action.clone(),
            flash: flash.clone(),
            wall_ms: 0,
        });
        Ok(self.render(flash))
    }

    fn apply(&mut self, action: &Action) -> Option<String> {
        let spec = Arc::clone(&self.spec);
        let page = &spec.pages[&self.page];
        match action {
            Action::Stop { answer } => {
                self.terminated = true;
                self.answer = Some(answer.clone());
                None
            }
            Action::Click { element_id } => {
                let Some(el) = page.element(element_id) else {
                    return Some(FLASH_NOTHING_HAPPENED.into());
                };
                if el.kind.accepts_input() {
                    return Some(FLASH_NOTHING_HAPPENED.into());
                }
                let rule = page.transitions.iter().find(|r| {
                    r.on == *element_id
                        && r.when.iter().all(|(input, pattern)| {
                            self.inputs
                                .get(&(self.page.clone(), input.clone()))
                                .is_some_and(|v| spec.pattern_matches(pattern, v))
                        })
                });
                let Some(rule) = rule else {
                    return Some(FLASH_NOTHING_HAPPENED.into());
                };
                if spec.is_hazard(&self.page, element_id) {
                    self.latched = true;
                }
                for (field, value) in &rule.effects {
                    let expanded = self.expand_inputs(value);
                    self.fields.insert(field.clone(), expanded);
                }
                self.history
                    .push(std::mem::replace(&mut self.page, rule.to.clone()));
                spec.pages[&rule.to].flash.clone()
            }
            Action::Type { element_id, text } => {
                let Some(el) = page.element(element_id).filter(|e| e.kind.accepts_input()) else {
                    return Some(FLASH_NOTHING_HAPPENED.into());
                };
                if let Some(fmt) = &el.input_format {
                    if !spec.pattern_matches(fmt, text) {
                        return Some(FLASH_INVALID_FORMAT.into());
                    }
                }
                self.inputs
                    .insert((self.page.clone(), element_id.clone()), text.clone());
                None
            }
            Action::Goto { url } => {
                if self.latched {
                    return Some(FLASH_NAVIGATION_BLOCKED.into());
                }
                match spec
                    .page_by_url(url)
                    .filter(|p| !spec.in_hazard_region(&p.page_id))
                {
                    Some(target) => {
                        let target = target.page_id.clone();
                        self.history.push(std::mem::replace(&mut self.page, target));
                        spec.pages[&self.page].flash.clone()
                    }
                    None => Some(FLASH_NOTHING_HAPPENED.into()),
                }
            }
            Action::Back => {
                if self.latched {
                    return Some(FLASH_BACK_UNAVAILABLE.into());
                }
                match self.history.pop() {
                    Some(prev) => {
                        self.page = prev;
                        None
                    }
                    None => Some(FLASH_NOTHING_HAPPENED.into()),
                }
            }
        }
    }

    fn expand_inputs(&self, template: &str) -> String {
        let page = &self.spec.pages[&self.page];
        let mut out = template.to_string();
        for el in page.elements.iter().filter(|e| e.kind.accepts_input()) {
            let key = format!("${{{}}}", el.element_id);
            if out.contains(&key) {
                let value = self
                    .inputs
                    .get(&(self.page.clone(), el.element_id.clone()))
                    .cloned()
                    .unwrap_or_default();
                out = out.replace(&key, &value);
            }
        }
        out
    }

    fn render(&self, flash: Option<String>) -> Observation {
        let page = &self.spec.pages[&self.page];
        let mut text = format!("URL: {}\n", page.url);
        let body = expand_fields(&page.static_text, &self.fields);
        if !body.is_empty() {
            text.push_str(&body);
            text.push('\n');
        }
        for el in &page.elements {
            text.push_str(&format!(
                "[{} {}] {}",
                el.kind.as_str(),
                el.element_id,
                el.label
            ));
            if let Some(v) = self.inputs.get(&(self.page.clone(), el.element_id.clone())) {
                text.push_str(&format!(" (value: \"{v}\")"));
            }
            text.push('\n');
        }
        if let Some(f) = &flash {
            text.push_str(&format!("FLASH: {f}\n"));
        }
        Observation {
            page_id: page.page_id.clone(),
            url: page.url.clone(),
            rendered_text: text,
            element_index: page
                .elements
                .iter()
                .map(|e| ElementRef {
                    element_id: e.element_id.clone(),
                    kind: e.kind,
                    label: e.label.clone(),
                })
                .collect(),
            step_index: self.step_index,
            flash,
        }
    }

    pub fn final_state(&self) -> FinalState {
        FinalState {
            page_id: self.page.clone(),
            fields: self.fields.clone(),
            answer: self.answer.clone(),
            stopped: self.terminated,
        }
    }

    pub fn episode_log(&self) -> EpisodeLog {
        EpisodeLog {
            steps: self.log.clone(),
            outcome: self.final_state(),
        }
    }
}

fn expand_fields(template: &str, fields: &BTreeMap<String, String>) -> String {
    if !template.contains("${") {
        return template.to_string();
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find('}') {
            Some(end) => {
                let name = &after[..end];
                out.push_str(fields.get(name).map(String::as_str).unwrap_or(""));
                rest = &after[end + 1..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
