use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::actor_critic::{
    first_candidate, las_disabled_select, lookahead_select, propose_candidates, ActorCriticError,
    DecisionContext, LasConfig, Selection,
};
use crate::backend::schema::{FactsOutput, SummaryOutput};
use crate::backend::{
    BackendError, GenerationRequest, MeteredBackend, PolicyBackend, RoleTag, SchemaId,
};
use crate::env::{evaluate, Action, EnvError, EnvHandle, Observation, SiteSpec, TaskSpec};
use crate::explore::{digest_line, ExploredStep};
use crate::memory::{
    FactSource, OutcomeKind, PredictedOutcome, SemanticFact, SiteMemory, WorkingMemory,
};
use crate::planner::{
    advance_progress, divergence, make_plan, replan, should_replan, ExplorationDigest, Plan,
    ReplanConfig,
};
use crate::state::AgentState;

pub const EPISODE_FORMAT: &str = "episode.v1";

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Selection(#[from] ActorCriticError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub category_tag: String,
    pub seed: u64,
    pub success: bool,
    pub steps_taken: usize,
    pub replans: usize,
    pub las_calls: usize,
    pub backend_tokens: u64,
    /// Map reads over the whole episode.
    pub map_reads: u64,
    /// Map reads made while choosing among proposed candidates.
    pub selection_map_reads: u64,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateLog {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighted_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub page_id: String,
    pub observation_digest: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_revision: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_subgoal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence: Option<f64>,
    pub replanned: bool,
    pub candidates: Vec<CandidateLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<String>,
    pub tokens: u64,
    pub map_reads: u64,
    pub selection_map_reads: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header {
        format: String,
        config: String,
        task_id: String,
        site_id: String,
        category: String,
        goal: String,
        seed: u64,
    },
    Step(StepLog),
    Result(EpisodeResult),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub log: Vec<LogRecord>,
}

impl EpisodeRun {
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&serde_json::to_string(rec).expect("log records serialize"));
            out.push('\n');
        }
        out
    }
}

/// Page text with element lines, the URL line and flashes removed.
fn body_text(obs: &Observation) -> String {
    obs.rendered_text
        .lines()
        .filter(|l| !l.starts_with("URL: ") && !l.starts_with('[') && !l.starts_with("FLASH: "))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Summary built without a model: url, page text cut at `cap` characters,
/// then every element label.
pub fn fallback_summary(obs: &Observation, cap: usize) -> String {
    let text: String = body_text(obs).chars().take(cap).collect();
    let mut out = obs.url.clone();
    if !text.is_empty() {
        out.push_str(&format!("\n{text}"));
    }
    if !obs.element_index.is_empty() {
        let labels: Vec<&str> = obs.element_index.iter().map(|e| e.label.as_str()).collect();
        out.push_str(&format!("\nELEMENTS: {}", labels.join(", ")));
    }
    if let Some(f) = &obs.flash {
        out.push_str(&format!("\nFLASH: {f}"));
    }
    out
}

fn recoverable(e: &BackendError) -> bool {
    matches!(
        e,
        BackendError::SchemaViolation { .. } | BackendError::NoMatchingRule { .. }
    )
}

/// Condensed view of the page for the actor and critic.
pub fn summarize_observation(
    obs: &Observation,
    cap: usize,
    backend: &dyn PolicyBackend,
) -> Result<String, BackendError> {
    let user = format!(
        "MODE: observe\nPAGE: {}\nURL: {}\nOBSERVATION:\n{}",
        obs.page_id, obs.url, obs.rendered_text
    );
    let req = GenerationRequest::new(
        RoleTag::Summarizer,
        SchemaId::SummaryV1,
        "Summarize the page for an agent: what it shows and what can be done here.",
        user,
    );
    match backend
        .generate(&req)
        .and_then(|r| r.decode::<SummaryOutput>(SchemaId::SummaryV1))
    {
        Ok(s) => Ok(s.delta),
        Err(e) if recoverable(&e) => {
            tracing::warn!(page = %obs.page_id, error = %e, "observation summary fell back to truncation");
            Ok(fallback_summary(obs, cap))
        }
        Err(e) => Err(e),
    }
}

/// Lets the memory agent turn one executed step into site facts.
fn update_facts(
    step: &ExploredStep,
    site_id: &str,
    memory: &mut SiteMemory,
    backend: &dyn PolicyBackend,
) -> Result<(), BackendError> {
    let user = format!(
        "SITE: {site_id}\nMODE: update\nTRAJECTORY DIGEST:\n{}\n",
        digest_line(step)
    );
    let req = GenerationRequest::new(
        RoleTag::Summarizer,
        SchemaId::FactsV1,
        "Extract site-specific rules from exploration logs: input formats, irreversible actions, capability limits and navigation hints.",
        user,
    );
    match backend
        .generate(&req)
        .and_then(|r| r.decode::<FactsOutput>(SchemaId::FactsV1))
    {
        Ok(out) => {
            for f in out.facts {
                memory
                    .facts
                    .add_fact(site_id, &f.statement, f.kind, FactSource::OnlineUpdate);
            }
            Ok(())
        }
        Err(e) if recoverable(&e) => {
            tracing::warn!(error = %e, "online fact update skipped");
            Ok(())
        }
        Err(e) => Err(e),
    }
}

struct Episode<'a> {
    task: &'a TaskSpec,
    config: &'a RunConfig,
    memory: &'a mut SiteMemory,
    backend: MeteredBackend<&'a dyn PolicyBackend>,
    env: EnvHandle,
    obs: Observation,
    state: AgentState,
    plan: Option<Plan>,
    expected: Option<PredictedOutcome>,
    digest: ExplorationDigest,
    replans: usize,
    las_calls: usize,
}

impl Episode<'_> {
    fn step(&mut self, log: &mut StepLog) -> Result<(), EpisodeError> {
        let cfg = self.config;
        let flags = &cfg.components;
        let goal = self.task.goal_text.as_str();
        let be: &dyn PolicyBackend = &self.backend;

        let summary = summarize_observation(&self.obs, cfg.budgets.summary_cap, be)?;
        log.summary = summary.clone();

        if flags.high_level_plan {
            let mut plan = match self.plan.take() {
                Some(p) => p,
                None => make_plan(goal, &self.obs, be)?,
            };
            plan = advance_progress(&plan, &self.obs, be)?;
            if flags.replanning {
                if let Some(expected) = &self.expected {
                    log.divergence = Some(divergence(&self.obs, expected));
                    let rc = ReplanConfig {
                        epsilon: cfg.epsilon,
                        enabled: true,
                    };
                    if should_replan(&self.obs, expected, &rc)
                        && self.replans < cfg.budgets.replan_cap
                    {
                        let facts = self.memory.facts.query_facts(
                            &self.task.site_id,
                            goal,
                            cfg.budgets.facts_k,
                        );
                        plan = replan(
                            goal,
                            &self.obs,
                            &self.state,
                            &facts,
                            &self.digest,
                            &plan,
                            be,
                        )?;
                        plan = advance_progress(&plan, &self.obs, be)?;
                        self.replans += 1;
                        log.replanned = true;
                    }
                }
            }
            log.plan_revision = Some(plan.revision);
            log.active_subgoal = Some(Plan::active_line(Some(&plan)));
            self.plan = Some(plan);
        }

        let map_on = flags.cognitive_map.mode().is_some();
        let facts: Vec<SemanticFact> = if map_on {
            let query = format!("{goal} {}", self.obs.rendered_text);
            self.memory
                .facts
                .query_facts(&self.task.site_id, &query, cfg.budgets.facts_k)
                .into_iter()
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        let selection = {
            let ctx = DecisionContext {
                site_id: &self.task.site_id,
                goal,
                plan: self.plan.as_ref(),
                observation: &self.obs,
                summary: &summary,
                state: &self.state,
                facts: &facts,
                map: map_on.then_some(&self.memory.map),
                critic_sees_raw: flags.critic_sees_raw,
            };
            let candidates = propose_candidates(&ctx, cfg.n_candidates, be)?;
            let reads = self.memory.map.reads();
            let before = reads.get();
            let selection = if flags.lookahead {
                self.las_calls += 1;
                let las = LasConfig {
                    n_candidates: cfg.n_candidates,
                    depth: cfg.depth,
                    parallel: cfg.parallel_rollouts,
                };
                lookahead_select(candidates, &ctx, &self.memory.map, &las, be)?
            } else if flags.critic {
                las_disabled_select(candidates, &ctx, be)?
            } else {
                first_candidate(candidates)?
            };
            log.selection_map_reads = reads.get() - before;
            selection
        };
        log.candidates = candidate_logs(&selection);
        self.expected = selection.expected_outcome().cloned();
        self.digest = selection.digest.clone();
        let action = selection.chosen.action.clone();
        log.chosen = Some(action.clone());

        if flags.memory_from_simulation && map_on {
            record_simulation(self.memory, &self.obs, &selection);
        }

        let next = self.env.step(&action)?;
        log.flash = next.flash.clone();
        self.state.record(&action, &next);
        if let Some(f) = &next.flash {
            self.state.working.push(
                self.env.step_index(),
                format!("{} -> {f}", action.signature()),
            );
        }
        if flags.online_memory_update && map_on {
            self.memory
                .map
                .record_transition(&self.obs, &action, &next, Some(be));
            if next.flash.is_some() || self.env.is_latched() {
                let step = ExploredStep {
                    from: self.obs.clone(),
                    action: action.clone(),
                    to: next.clone(),
                    irreversible: self.env.is_latched(),
                };
                update_facts(&step, &self.task.site_id, self.memory, be)?;
            }
        }
        self.obs = next;
        Ok(())
    }
}

/// Writes the chosen rollout's known predictions into the map as if observed.
fn record_simulation(memory: &mut SiteMemory, current: &Observation, selection: &Selection) {
    let Some(t) = selection
        .trajectories
        .iter()
        .find(|t| t.root_candidate.index == selection.chosen.index)
    else {
        return;
    };
    let mut from = current.clone();
    for s in &t.steps {
        if s.action.is_stop() {
            break;
        }
        let OutcomeKind::Known { observation, .. } = &s.predicted.kind else {
            break;
        };
        memory
            .map
            .record_transition(&from, &s.action, observation, None);
        from = observation.clone();
    }
}

fn candidate_logs(selection: &Selection) -> Vec<CandidateLog> {
    selection
        .candidates
        .candidates
        .iter()
        .map(|c| {
            let traj = selection
                .trajectories
                .iter()
                .find(|t| t.root_candidate.index == c.index);
            let value = traj
                .map(|t| t.raw_value)
                .or_else(|| selection.assessments.get(c.index).map(|a| a.value));
            CandidateLog {
                action: c.action.signature(),
                value,
                weighted_value: traj.map(|t| t.weighted_value),
            }
        })
        .collect()
}

/// Runs one task to completion. Every failure is contained in the result.
pub fn run_episode(
    task: &TaskSpec,
    spec: &Arc<SiteSpec>,
    config: &RunConfig,
    memory: &mut SiteMemory,
    backend: &dyn PolicyBackend,
    seed: u64,
) -> EpisodeRun {
    let started = Instant::now();
    let header = LogRecord::Header {
        format: EPISODE_FORMAT.into(),
        config: config.name.clone(),
        task_id: task.task_id.clone(),
        site_id: task.site_id.clone(),
        category: task.category_tag.clone(),
        goal: task.goal_text.clone(),
        seed,
    };
    let mut log = vec![header];
    let mut result = EpisodeResult {
        task_id: task.task_id.clone(),
        category_tag: task.category_tag.clone(),
        seed,
        success: false,
        steps_taken: 0,
        replans: 0,
        las_calls: 0,
        backend_tokens: 0,
        map_reads: 0,
        selection_map_reads: 0,
        wall_ms: 0,
        error: None,
    };
    let (env, obs) = match EnvHandle::reset(Arc::clone(spec), task) {
        Ok(x) => x,
        Err(e) => {
            result.error = Some(e.to_string());
            log.push(LogRecord::Result(result.clone()));
            return EpisodeRun { result, log };
        }
    };
    if let Some(mode) = config.components.cognitive_map.mode() {
        memory.map.mode = mode;
    }
    let reads = memory.map.reads();
    let budgets = &config.budgets;
    let mut ep = Episode {
        task,
        config,
        memory,
        backend: MeteredBackend::new(backend),
        env,
        obs,
        state: AgentState::new(
            budgets.history_len,
            WorkingMemory::new(budgets.working_capacity),
        ),
        plan: None,
        expected: None,
        digest: ExplorationDigest::default(),
        replans: 0,
        las_calls: 0,
    };
    while !ep.env.is_terminated() && !ep.env.budget_exhausted() {
        let tokens_before = ep.backend.tokens();
        let reads_before = reads.get();
        let mut step = StepLog {
            step: ep.env.step_index() + 1,
            page_id: ep.obs.page_id.clone(),
            observation_digest: ep.obs.digest(),
            ..StepLog::default()
        };
        let outcome = ep.step(&mut step);
        step.tokens = ep.backend.tokens() - tokens_before;
        step.map_reads = reads.get() - reads_before;
        result.backend_tokens += step.tokens;
        result.map_reads += step.map_reads;
        result.selection_map_reads += step.selection_map_reads;
        if let Err(e) = outcome {
            tracing::warn!(task = %task.task_id, error = %e, "episode failed");
            step.error = Some(e.to_string());
            result.error = Some(e.to_string());
            log.push(LogRecord::Step(step));
            break;
        }
        log.push(LogRecord::Step(step));
    }
    result.steps_taken = ep.env.step_index();
    result.replans = ep.replans;
    result.las_calls = ep.las_calls;
    result.success = result.error.is_none() && evaluate(task, &ep.env.episode_log());
    if config.record_wall_time {
        result.wall_ms = started.elapsed().as_millis() as u64;
    }
    log.push(LogRecord::Result(result.clone()));
    EpisodeRun { result, log }
}
