//! Candidate proposal, critic assessment and look-ahead selection.
//!
//! With look-ahead on, every candidate is rolled out `depth` steps through
//! the cognitive map (never the environment), the critic scores each
//! simulated end state once, and the score is discounted by the product of
//! `1 − U` over the rollout. Without look-ahead the critic scores each
//! candidate directly from the outcome annotations gathered at proposal.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::backend::schema::{validate, AssessmentOutput, CandidatesOutput, RubricScores};
use crate::backend::{BackendError, GenerationRequest, PolicyBackend, RoleTag, SchemaId};
use crate::env::{available_actions, Action, Observation};
use crate::memory::{edge_signature, CognitiveMap, OutcomeKind, PredictedOutcome, SemanticFact};
use crate::planner::{ExplorationDigest, Plan};
use crate::state::AgentState;

pub const DEFAULT_CANDIDATES: usize = 3;
pub const DEFAULT_DEPTH: usize = 2;

const ACTOR_SYSTEM: &str =
    "You are the actor of a web agent. Propose the most promising next actions with \
short reasoning. Use only element ids shown on the page unless navigation by url is necessary.";
const CRITIC_SYSTEM: &str = "You are the critic of a web agent. Score the proposed action or simulated \
trajectory from 0 to 10 on goal alignment, state viability (recoverability), action coherence, plan \
consistency and outcome safety.";

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ActorCriticError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("actor proposed no usable action")]
    EmptyProposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: usize,
    pub action: Action,
    pub reasoning: String,
    /// Not among the current page's affordances.
    pub speculative: bool,
    /// One-step outcome gathered at proposal time, if the map was consulted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<PredictedOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueAssessment {
    pub scores: RubricScores,
    pub value: f64,
    pub justification: String,
    #[serde(default)]
    pub blockers: Vec<String>,
}

impl ValueAssessment {
    pub fn from_scores(scores: RubricScores, justification: String, blockers: Vec<String>) -> Self {
        ValueAssessment {
            value: scores.value(),
            scores,
            justification,
            blockers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub action: Action,
    pub predicted: PredictedOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub root_candidate: Candidate,
    pub steps: Vec<SimStep>,
    pub raw_value: f64,
    pub confidence: f64,
    pub weighted_value: f64,
    pub placeholder_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessment: Option<ValueAssessment>,
}

impl SimTrajectory {
    fn unscored(root: Candidate, steps: Vec<SimStep>) -> Self {
        let confidence = confidence_of(&steps);
        let placeholder_count = steps
            .iter()
            .filter(|s| s.predicted.is_placeholder())
            .count();
        SimTrajectory {
            root_candidate: root,
            steps,
            raw_value: 0.0,
            confidence,
            weighted_value: 0.0,
            placeholder_count,
            assessment: None,
        }
    }

    fn score(&mut self, assessment: ValueAssessment) {
        self.raw_value = assessment.value;
        self.weighted_value = self.raw_value * self.confidence;
        self.assessment = Some(assessment);
    }

    pub fn hazard(&self) -> bool {
        self.steps.iter().any(|s| s.predicted.hazard())
    }

    /// Page of the last known predicted observation, if the rollout ends on one.
    pub fn final_page(&self) -> Option<&str> {
        self.steps.last().and_then(|s| s.predicted.page_id())
    }
}

/// ∏ (1 − U) over the rollout.
pub fn confidence_of(steps: &[SimStep]) -> f64 {
    steps
        .iter()
        .map(|s| 1.0 - s.predicted.uncertainty)
        .product()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LasConfig {
    pub n_candidates: usize,
    pub depth: usize,
    /// Roll candidates out on scoped threads instead of one after another.
    pub parallel: bool,
}

impl Default for LasConfig {
    fn default() -> Self {
        LasConfig {
            n_candidates: DEFAULT_CANDIDATES,
            depth: DEFAULT_DEPTH,
            parallel: false,
        }
    }
}

/// Everything the actor and critic see at one decision point.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub site_id: &'a str,
    pub goal: &'a str,
    pub plan: Option<&'a Plan>,
    pub observation: &'a Observation,
    pub summary: &'a str,
    pub state: &'a AgentState,
    pub facts: &'a [SemanticFact],
    pub map: Option<&'a CognitiveMap>,
    pub critic_sees_raw: bool,
}

impl DecisionContext<'_> {
    fn header(&self, mode: &str, page: &Observation) -> String {
        format!(
            "SITE: {}\nGOAL: {}\n{}\nPAGE: {}\nURL: {}\nMODE: {mode}\n",
            self.site_id,
            self.goal,
            Plan::active_line(self.plan),
            page.page_id,
            page.url
        )
    }

    fn context_block(&self) -> String {
        let mut out = String::new();
        if let Some(plan) = self.plan {
            out.push_str(&plan.render());
        }
        out.push_str(&self.state.render());
        if !self.facts.is_empty() {
            out.push_str("FACTS:\n");
            for f in self.facts {
                out.push_str(&format!("- {}\n", f.statement));
            }
        }
        out
    }
}

/// Outcome of a stop action: the episode ends where it is, with certainty.
fn stop_outcome(current: &Observation) -> PredictedOutcome {
    PredictedOutcome {
        kind: OutcomeKind::Known {
            observation: current.clone(),
            summary: None,
        },
        uncertainty: 0.0,
    }
}

fn describe_outcome(p: &PredictedOutcome) -> String {
    match &p.kind {
        OutcomeKind::Placeholder => "unexplored".into(),
        OutcomeKind::Known {
            observation,
            summary,
        } => {
            let mut s = format!("{} [U={:.2}]", observation.page_id, p.uncertainty);
            if let Some(sum) = summary {
                s.push_str(&format!(" {}", sum.delta));
                if !sum.new_affordances.is_empty() {
                    s.push_str(&format!(" (new: {})", sum.new_affordances.join(", ")));
                }
                if sum.hazard_flag {
                    s.push_str(" HAZARD");
                }
            }
            s
        }
    }
}

fn affordance_match(obs: &Observation, action: &Action) -> bool {
    match action {
        Action::Click { element_id } => obs
            .element_index
            .iter()
            .any(|e| &e.element_id == element_id && !e.kind.accepts_input()),
        Action::Type { element_id, .. } => obs
            .element_index
            .iter()
            .any(|e| &e.element_id == element_id && e.kind.accepts_input()),
        Action::Back | Action::Stop { .. } => true,
        Action::Goto { .. } => false,
    }
}

fn ask_actor(
    user: String,
    n: usize,
    backend: &dyn PolicyBackend,
) -> Result<Vec<(Action, String)>, ActorCriticError> {
    let req = GenerationRequest::new(RoleTag::Actor, SchemaId::CandidatesV1, ACTOR_SYSTEM, user);
    let out: CandidatesOutput = backend.generate(&req)?.decode(SchemaId::CandidatesV1)?;
    let mut seen = Vec::new();
    let mut picked = Vec::new();
    for c in out.candidates {
        let sig = c.action.signature();
        if seen.contains(&sig) {
            continue;
        }
        seen.push(sig);
        picked.push((c.action, c.reasoning));
        if picked.len() == n {
            break;
        }
    }
    if picked.is_empty() {
        return Err(ActorCriticError::EmptyProposal);
    }
    Ok(picked)
}

/// Asks the actor for up to `n` distinct candidates. When a map is present,
/// each available action is annotated with its retrieved outcome, and those
/// annotations are attached to the matching candidates.
pub fn propose_candidates(
    ctx: &DecisionContext<'_>,
    n: usize,
    backend: &dyn PolicyBackend,
) -> Result<CandidateSet, ActorCriticError> {
    let obs = ctx.observation;
    let actions = available_actions(obs);
    let annotations: Vec<(String, Option<PredictedOutcome>)> = actions
        .iter()
        .map(|a| {
            let predicted = match (ctx.map, a.is_stop()) {
                (Some(map), false) => Some(map.retrieve(obs, a)),
                _ => None,
            };
            (edge_signature(a), predicted)
        })
        .collect();

    let mut user = ctx.header("propose", obs);
    user.push_str(&format!("N: {n}\nSUMMARY: {}\n", ctx.summary));
    user.push_str(&ctx.context_block());
    user.push_str("AVAILABLE ACTIONS:\n");
    for (a, (_, p)) in actions.iter().zip(&annotations) {
        match p {
            Some(p) => user.push_str(&format!("- {} => {}\n", a.signature(), describe_outcome(p))),
            None => user.push_str(&format!("- {}\n", a.signature())),
        }
    }
    user.push_str(&format!("OBSERVATION:\n{}", obs.rendered_text));

    let picked = ask_actor(user, n, backend)?;
    let candidates = picked
        .into_iter()
        .enumerate()
        .map(|(index, (action, reasoning))| {
            let speculative = !affordance_match(obs, &action);
            let predicted = if action.is_stop() {
                ctx.map.map(|_| stop_outcome(obs))
            } else if speculative {
                None
            } else {
                let sig = edge_signature(&action);
                annotations
                    .iter()
                    .find(|(s, _)| *s == sig)
                    .and_then(|(_, p)| p.clone())
            };
            Candidate {
                index,
                action,
                reasoning,
                speculative,
                predicted,
            }
        })
        .collect();
    Ok(CandidateSet {
        candidates,
        step_index: ctx.state.step_index,
    })
}

/// Rolls `root` forward through the map. The first step uses the root
/// action; later steps ask the actor for a single continuation from the
/// predicted page. Stops early on a stop action or a hazard-flagged outcome.
pub fn simulate_rollout(
    root: &Candidate,
    ctx: &DecisionContext<'_>,
    map: &CognitiveMap,
    depth: usize,
    backend: &dyn PolicyBackend,
) -> Result<SimTrajectory, ActorCriticError> {
    let depth = depth.max(1);
    let mut steps = Vec::with_capacity(depth);
    let mut current = ctx.observation.clone();
    let mut action = root.action.clone();
    for d in 0..depth {
        let predicted = if action.is_stop() {
            stop_outcome(&current)
        } else if d == 0 && root.speculative {
            PredictedOutcome::placeholder()
        } else {
            map.retrieve(&current, &action)
        };
        let done = action.is_stop() || predicted.hazard();
        let next = predicted.observation();
        steps.push(SimStep {
            action: action.clone(),
            predicted,
        });
        if done || d + 1 == depth {
            break;
        }
        current = next;
        let mut user = ctx.header("continue", &current);
        if let Some(s) = steps.last().and_then(|s| s.predicted.summary()) {
            user.push_str(&format!("SUMMARY: {}\n", s.delta));
        }
        user.push_str("SIMULATED SO FAR:\n");
        for s in &steps {
            user.push_str(&format!("- {}\n", s.action.signature()));
        }
        user.push_str("AVAILABLE ACTIONS:\n");
        for a in available_actions(&current) {
            user.push_str(&format!("- {}\n", a.signature()));
        }
        user.push_str(&format!("OBSERVATION:\n{}", current.rendered_text));
        match ask_actor(user, 1, backend) {
            Ok(mut picked) => action = picked.swap_remove(0).0,
            Err(ActorCriticError::EmptyProposal) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(SimTrajectory::unscored(root.clone(), steps))
}

fn ask_critic(
    user: String,
    backend: &dyn PolicyBackend,
) -> Result<ValueAssessment, ActorCriticError> {
    let req = GenerationRequest::new(RoleTag::Critic, SchemaId::AssessmentV1, CRITIC_SYSTEM, user);
    match backend
        .generate(&req)?
        .decode::<AssessmentOutput>(SchemaId::AssessmentV1)?
    {
        AssessmentOutput::Scored {
            scores,
            justification,
            blockers,
        } => Ok(ValueAssessment::from_scores(
            scores,
            justification,
            blockers,
        )),
        AssessmentOutput::Predicate { .. } => Err(BackendError::SchemaViolation {
            schema: SchemaId::AssessmentV1,
            attempts: 1,
            detail: "value assessment needs rubric scores".into(),
        }
        .into()),
    }
}

fn outcome_block(p: &PredictedOutcome, raw: bool) -> String {
    let mut out = String::new();
    if let Some(s) = p.summary() {
        out.push_str(&format!("  delta: {}\n", s.delta));
        if !s.new_affordances.is_empty() {
            out.push_str(&format!("  new: {}\n", s.new_affordances.join(", ")));
        }
    }
    if raw {
        if let OutcomeKind::Known { observation, .. } = &p.kind {
            for line in observation.rendered_text.lines() {
                out.push_str(&format!("  | {line}\n"));
            }
        }
    }
    out
}

/// One critic assessment of a whole simulated trajectory.
pub fn assess_trajectory(
    traj: &SimTrajectory,
    ctx: &DecisionContext<'_>,
    backend: &dyn PolicyBackend,
) -> Result<ValueAssessment, ActorCriticError> {
    let obs = ctx.observation;
    let mut user = ctx.header("trajectory", obs);
    user.push_str(&format!(
        "CURRENT PAGE: {}\nCANDIDATE: {}\n",
        obs.page_id,
        traj.root_candidate.action.signature()
    ));
    user.push_str(&format!(
        "FINAL PAGE: {}\n",
        traj.final_page().unwrap_or("unknown")
    ));
    user.push_str(&format!(
        "HAZARD: {}\n",
        if traj.hazard() { "yes" } else { "no" }
    ));
    user.push_str(&format!(
        "REASONING: {}\nSTEPS:\n",
        traj.root_candidate.reasoning
    ));
    for (i, s) in traj.steps.iter().enumerate() {
        user.push_str(&format!(
            "{}. {} -> {}\n",
            i + 1,
            s.action.signature(),
            describe_outcome(&s.predicted)
        ));
        user.push_str(&outcome_block(&s.predicted, ctx.critic_sees_raw));
    }
    user.push_str(&ctx.context_block());
    ask_critic(user, backend)
}

/// Critic assessment of a single candidate, using only its proposal-time annotation.
pub fn assess_candidate(
    candidate: &Candidate,
    ctx: &DecisionContext<'_>,
    backend: &dyn PolicyBackend,
) -> Result<ValueAssessment, ActorCriticError> {
    let obs = ctx.observation;
    let mut user = ctx.header("candidate", obs);
    user.push_str(&format!(
        "CURRENT PAGE: {}\nCANDIDATE: {}\n",
        obs.page_id,
        candidate.action.signature()
    ));
    let final_page = candidate
        .predicted
        .as_ref()
        .and_then(|p| p.page_id())
        .unwrap_or("unknown");
    user.push_str(&format!("FINAL PAGE: {final_page}\n"));
    let hazard = candidate.predicted.as_ref().is_some_and(|p| p.hazard());
    user.push_str(&format!("HAZARD: {}\n", if hazard { "yes" } else { "no" }));
    user.push_str(&format!("REASONING: {}\n", candidate.reasoning));
    if let Some(p) = &candidate.predicted {
        user.push_str(&format!("PREDICTED: {}\n", describe_outcome(p)));
        user.push_str(&outcome_block(p, ctx.critic_sees_raw));
    }
    user.push_str(&format!("SUMMARY: {}\n", ctx.summary));
    user.push_str(&ctx.context_block());
    ask_critic(user, backend)
}

/// Descending weighted value, then fewer placeholders, then lower index.
pub fn trajectory_order(a: &SimTrajectory, b: &SimTrajectory) -> Ordering {
    b.weighted_value
        .partial_cmp(&a.weighted_value)
        .unwrap_or(Ordering::Equal)
        .then(a.placeholder_count.cmp(&b.placeholder_count))
        .then(a.root_candidate.index.cmp(&b.root_candidate.index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub chosen: Candidate,
    pub candidates: CandidateSet,
    #[serde(default)]
    pub trajectories: Vec<SimTrajectory>,
    #[serde(default)]
    pub assessments: Vec<ValueAssessment>,
    #[serde(default)]
    pub digest: ExplorationDigest,
}

impl Selection {
    /// Step-1 prediction of the chosen rollout (the expectation the agent acts on).
    pub fn expected_outcome(&self) -> Option<&PredictedOutcome> {
        self.trajectories
            .iter()
            .find(|t| t.root_candidate.index == self.chosen.index)
            .and_then(|t| t.steps.first())
            .map(|s| &s.predicted)
    }
}

const WORKED_MIN: f64 = 0.6;
const FAILED_MAX: f64 = 0.4;

/// Deterministic digest of a look-ahead round.
pub fn build_digest(trajectories: &[SimTrajectory]) -> ExplorationDigest {
    let mut d = ExplorationDigest::default();
    for t in trajectories {
        let path: Vec<String> = t.steps.iter().map(|s| s.action.signature()).collect();
        let line = format!(
            "{} -> {}",
            path.join(" then "),
            t.final_page().unwrap_or("unknown")
        );
        if t.hazard() || t.raw_value < FAILED_MAX {
            d.failed.push(line);
        } else if t.raw_value >= WORKED_MIN {
            d.worked.push(line);
        }
        for s in &t.steps {
            for a in s
                .predicted
                .summary()
                .map(|s| s.new_affordances.as_slice())
                .unwrap_or_default()
            {
                if !d.new_affordances.contains(a) {
                    d.new_affordances.push(a.clone());
                }
            }
        }
        for b in t.assessment.iter().flat_map(|a| &a.blockers) {
            if !d.prerequisites.contains(b) {
                d.prerequisites.push(b.clone());
            }
        }
    }
    d
}

/// Look-ahead selection over an already proposed candidate set.
pub fn lookahead_select(
    candidates: CandidateSet,
    ctx: &DecisionContext<'_>,
    map: &CognitiveMap,
    cfg: &LasConfig,
    backend: &dyn PolicyBackend,
) -> Result<Selection, ActorCriticError> {
    if candidates.candidates.is_empty() {
        return Err(ActorCriticError::EmptyProposal);
    }
    let run = |c: &Candidate| -> Result<SimTrajectory, ActorCriticError> {
        let mut t = simulate_rollout(c, ctx, map, cfg.depth, backend)?;
        let a = assess_trajectory(&t, ctx, backend)?;
        t.score(a);
        Ok(t)
    };
    let results: Vec<Result<SimTrajectory, ActorCriticError>> = if cfg.parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = candidates
                .candidates
                .iter()
                .map(|c| s.spawn(move || run(c)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("rollout thread panicked"))
                .collect()
        })
    } else {
        candidates.candidates.iter().map(run).collect()
    };
    let trajectories = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = trajectories
        .iter()
        .min_by(|a, b| trajectory_order(a, b))
        .expect("non-empty");
    let chosen = best.root_candidate.clone();
    let digest = build_digest(&trajectories);
    let as_json = serde_json::to_value(&digest).expect("digest serializes");
    validate(SchemaId::DigestV1, &as_json).map_err(|detail| BackendError::SchemaViolation {
        schema: SchemaId::DigestV1,
        attempts: 1,
        detail,
    })?;
    Ok(Selection {
        chosen,
        candidates,
        trajectories,
        assessments: Vec::new(),
        digest,
    })
}

/// Proposal followed by look-ahead selection.
pub fn select_action(
    ctx: &DecisionContext<'_>,
    map: &CognitiveMap,
    cfg: &LasConfig,
    backend: &dyn PolicyBackend,
) -> Result<Selection, ActorCriticError> {
    let candidates = propose_candidates(ctx, cfg.n_candidates, backend)?;
    lookahead_select(candidates, ctx, map, cfg, backend)
}

/// Selection without look-ahead: the critic scores each candidate once and
/// the best value wins, ties to the lower index.
pub fn las_disabled_select(
    candidates: CandidateSet,
    ctx: &DecisionContext<'_>,
    backend: &dyn PolicyBackend,
) -> Result<Selection, ActorCriticError> {
    if candidates.candidates.is_empty() {
        return Err(ActorCriticError::EmptyProposal);
    }
    let assessments = candidates
        .candidates
        .iter()
        .map(|c| assess_candidate(c, ctx, backend))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (i, a) in assessments.iter().enumerate() {
        if a.value > assessments[best].value {
            best = i;
        }
    }
    let chosen = candidates.candidates[best].clone();
    Ok(Selection {
        chosen,
        candidates,
        trajectories: Vec::new(),
        assessments,
        digest: ExplorationDigest::default(),
    })
}

/// Selection with the critic switched off: the actor's first candidate.
pub fn first_candidate(candidates: CandidateSet) -> Result<Selection, ActorCriticError> {
    let chosen = candidates
        .candidates
        .first()
        .cloned()
        .ok_or(ActorCriticError::EmptyProposal)?;
    Ok(Selection {
        chosen,
        candidates,
        trajectories: Vec::new(),
        assessments: Vec::new(),
        digest: ExplorationDigest::default(),
    })
}
