//! Task-free exploration that seeds the cognitive map, and mining of the
//! resulting trajectories into semantic facts.
//!
//! Nothing here sees a task: [`run_exploration`] takes a site, a policy
//! portfolio and a budget only.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::schema::{ExploreStepOutput, FactsOutput};
use crate::backend::{BackendError, GenerationRequest, PolicyBackend, RoleTag, SchemaId};
use crate::env::{
    available_actions, Action, EnvHandle, Observation, SiteSpec, FLASH_INVALID_FORMAT,
};
use crate::memory::{
    edge_signature, FactSource, ObservationKey, SemanticFact, SiteMemory, TransitionRecord,
};

/// Plain navigation lines per mining request.
pub const MINING_BATCH: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    BreadthFirstAffordance,
    DepthFirstRandom,
    EntropyGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationPolicyConfig {
    pub policy_id: String,
    pub strategy: Strategy,
    pub temperature: f64,
    /// Step limit of one exploration episode before the site is reset.
    pub max_steps: usize,
}

impl ExplorationPolicyConfig {
    pub fn new(
        policy_id: impl Into<String>,
        strategy: Strategy,
        temperature: f64,
        max_steps: usize,
    ) -> Self {
        ExplorationPolicyConfig {
            policy_id: policy_id.into(),
            strategy,
            temperature,
            max_steps: max_steps.max(1),
        }
    }
}

/// One explorer per strategy at temperatures 0.3, 0.7 and 1.0.
pub fn default_portfolio() -> Vec<ExplorationPolicyConfig> {
    vec![
        ExplorationPolicyConfig::new("breadth", Strategy::BreadthFirstAffordance, 0.3, 60),
        ExplorationPolicyConfig::new("random", Strategy::DepthFirstRandom, 0.7, 30),
        ExplorationPolicyConfig::new("entropy", Strategy::EntropyGreedy, 1.0, 60),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationBudget {
    pub total_env_steps: usize,
    pub per_policy_steps: usize,
    pub max_map_records: usize,
}

impl ExplorationBudget {
    pub fn new(total_env_steps: usize, per_policy_steps: usize, max_map_records: usize) -> Self {
        ExplorationBudget {
            total_env_steps: total_env_steps.max(1),
            per_policy_steps: per_policy_steps.clamp(1, total_env_steps.max(1)),
            max_map_records: max_map_records.max(1),
        }
    }

    /// Whole budget for every policy, with a generous record cap.
    pub fn steps(total: usize) -> Self {
        Self::new(total, total, 10_000)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploredStep {
    pub from: Observation,
    pub action: Action,
    pub to: Observation,
    /// The action fired an irreversible transition.
    #[serde(default)]
    pub irreversible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTrajectories {
    pub policy_id: String,
    pub episodes: Vec<Vec<ExploredStep>>,
}

impl PolicyTrajectories {
    pub fn steps(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub site_id: String,
    pub trajectories: Vec<PolicyTrajectories>,
    pub distinct_keys_visited: usize,
    #[serde(default)]
    pub distinct_pages_visited: usize,
    pub steps_used: usize,
    pub records_written: usize,
    pub budget: ExplorationBudget,
}

#[derive(Debug, thiserror::Error)]
#[error("exploration aborted after {} steps: {error}", report.steps_used)]
pub struct ExplorationAborted {
    pub error: BackendError,
    /// Everything gathered before the failure; the memory keeps it too.
    pub report: Box<ExplorationReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExplorationError {
    #[error("no exploration policies given")]
    NoPolicies,
    #[error(transparent)]
    Aborted(#[from] ExplorationAborted),
}

/// Fraction of the site's pages seen at least once.
pub fn coverage(report: &ExplorationReport, spec: &SiteSpec) -> f64 {
    if spec.pages.is_empty() {
        return 0.0;
    }
    (report.distinct_pages_visited as f64 / spec.pages.len() as f64).min(1.0)
}

/// Text typed into an input on the `attempt`-th try: first a naive probe,
/// then one shaped by any format hint in the label.
pub fn probe_text(label: &str, attempt: usize) -> String {
    if attempt == 0 {
        return "sample".into();
    }
    let l = label.to_lowercase();
    if l.contains("mm/dd/yyyy") || l.contains("date") {
        "01/15/2024".into()
    } else if l.contains("url") || l.contains("homepage") || l.contains("website") {
        "https://example.com".into()
    } else {
        "hello from the explorer".into()
    }
}

struct Explorer<'a> {
    spec: &'a Arc<SiteSpec>,
    backend: Option<&'a dyn PolicyBackend>,
    memory: &'a mut SiteMemory,
    budget: ExplorationBudget,
    rng: ChaCha8Rng,
    seen: BTreeSet<ObservationKey>,
    pages: BTreeSet<String>,
    steps_used: usize,
    records_written: usize,
    pending_error: Option<BackendError>,
}

/// Per-policy bookkeeping of what was tried where.
#[derive(Default)]
struct Tried {
    actions: HashMap<ObservationKey, HashSet<String>>,
    typed: HashMap<(ObservationKey, String), usize>,
}

impl Tried {
    fn has(&self, key: &ObservationKey, action: &Action) -> bool {
        self.actions
            .get(key)
            .is_some_and(|s| s.contains(&edge_signature(action)))
    }

    fn mark(&mut self, key: &ObservationKey, action: &Action) {
        self.actions
            .entry(key.clone())
            .or_default()
            .insert(edge_signature(action));
    }
}

impl Explorer<'_> {
    fn record(&mut self, from: &Observation, action: &Action, to: &Observation) {
        if self.records_written >= self.budget.max_map_records {
            return;
        }
        let outcome = self
            .memory
            .map
            .record_transition(from, action, to, self.backend);
        if outcome.inserted {
            self.records_written += 1;
        }
        if let Some(e @ BackendError::BackendUnavailable { .. }) = outcome.summarizer_error {
            self.pending_error = Some(e);
        }
    }

    fn candidates(obs: &Observation) -> Vec<Action> {
        available_actions(obs)
            .into_iter()
            .filter(|a| !a.is_stop())
            .collect()
    }

    /// Fills in probe text for a `type` action.
    fn concretize(obs: &Observation, action: Action, tried: &mut Tried) -> Action {
        match action {
            Action::Type { element_id, .. } => {
                let key = (ObservationKey::of(obs), element_id.clone());
                let attempt = tried.typed.entry(key).or_insert(0);
                let label = obs
                    .element_index
                    .iter()
                    .find(|e| e.element_id == element_id)
                    .map(|e| e.label.as_str())
                    .unwrap_or("");
                let text = probe_text(label, *attempt);
                *attempt += 1;
                Action::type_text(element_id, text)
            }
            other => other,
        }
    }

    fn choose_entropy(&mut self, obs: &Observation) -> Action {
        let options = Self::candidates(obs);
        let forward: Vec<&Action> = options.iter().filter(|a| **a != Action::Back).collect();
        let unknown: Vec<&Action> = forward
            .iter()
            .copied()
            .filter(|a| self.memory.map.uncertainty(obs, a) >= 1.0)
            .collect();
        if !unknown.is_empty() {
            return (*unknown.choose(&mut self.rng).expect("non-empty")).clone();
        }
        let map = &self.memory.map;
        let has_unknown = |o: &Observation| {
            Self::candidates(o)
                .iter()
                .any(|a| *a != Action::Back && map.uncertainty(o, a) >= 1.0)
        };
        if let Some(step) = self.route_toward(obs, has_unknown) {
            return step;
        }
        // Nothing unknown is reachable forward: take the least certain option.
        let scored: Vec<(f64, &Action)> = options
            .iter()
            .map(|a| (self.memory.map.uncertainty(obs, a), a))
            .collect();
        let best = scored.iter().map(|(u, _)| *u).fold(f64::MIN, f64::max);
        let ties: Vec<&Action> = scored
            .iter()
            .filter(|(u, _)| *u == best)
            .map(|(_, a)| *a)
            .collect();
        (*ties
            .choose(&mut self.rng)
            .expect("back is always available"))
        .clone()
    }

    fn choose_breadth(&mut self, obs: &Observation, tried: &Tried, just_probed: bool) -> Action {
        if just_probed {
            // Return to the parent to finish its untried affordances first.
            return Action::Back;
        }
        let key = ObservationKey::of(obs);
        if let Some(a) = Self::candidates(obs)
            .into_iter()
            .find(|a| *a != Action::Back && !tried.has(&key, a))
        {
            return a;
        }
        let has_untried = |o: &Observation| {
            let k = ObservationKey::of(o);
            Self::candidates(o)
                .iter()
                .any(|a| *a != Action::Back && !tried.has(&k, a))
        };
        self.route_toward(obs, has_untried).unwrap_or(Action::Back)
    }

    /// First action on the shortest path of known forward edges from `obs`
    /// to another page satisfying `wanted`. Edges into hazard outcomes and
    /// `back` edges (whose target depends on history) are not followed.
    fn route_toward(
        &self,
        obs: &Observation,
        wanted: impl Fn(&Observation) -> bool,
    ) -> Option<Action> {
        let records = self.memory.map.records();
        let start = ObservationKey::of(obs);
        let mut visited: HashSet<&ObservationKey> = HashSet::from([&start]);
        let mut queue: VecDeque<(&ObservationKey, &Action)> = VecDeque::new();
        fn edges<'r>(
            records: &'r [TransitionRecord],
            k: &ObservationKey,
        ) -> Vec<&'r TransitionRecord> {
            records
                .iter()
                .filter(|r| {
                    &r.from_key == k && !matches!(r.action, Action::Back | Action::Type { .. })
                })
                .filter(|r| !r.summary.as_ref().is_some_and(|s| s.hazard_flag))
                .collect()
        }
        for r in edges(records, &start) {
            if visited.insert(&r.to_key) {
                if wanted(&r.raw_to_observation) {
                    return Some(r.action.clone());
                }
                queue.push_back((&r.to_key, &r.action));
            }
        }
        while let Some((k, first)) = queue.pop_front() {
            for r in edges(records, k) {
                if visited.insert(&r.to_key) {
                    if wanted(&r.raw_to_observation) {
                        return Some(first.clone());
                    }
                    queue.push_back((&r.to_key, first));
                }
            }
        }
        None
    }

    fn choose_random(
        &mut self,
        obs: &Observation,
        tried: &Tried,
        temperature: f64,
    ) -> Result<Action, BackendError> {
        let key = ObservationKey::of(obs);
        let options = Self::candidates(obs);
        if let Some(backend) = self.backend {
            let mut user = format!(
                "PAGE: {}\nURL: {}\nMODE: explore\nACTIONS:\n",
                obs.page_id, obs.url
            );
            for (i, a) in options.iter().enumerate() {
                let mark = if tried.has(&key, a) { "" } else { " (untried)" };
                user.push_str(&format!("{i}. {}{mark}\n", a.signature()));
            }
            user.push_str(&format!("OBSERVATION:\n{}", obs.rendered_text));
            let req = GenerationRequest::new(
                RoleTag::Explorer,
                SchemaId::ExploreStepV1,
                "You explore a website to learn how it works. Prefer actions you have not tried. Reply with the index of one action.",
                user,
            )
            .with_temperature(temperature.clamp(0.0, 2.0));
            let out: ExploreStepOutput = backend.generate(&req)?.decode(SchemaId::ExploreStepV1)?;
            if let Some(a) = out.choice.and_then(|i| options.get(i)) {
                return Ok(a.clone());
            }
        }
        let untried: Vec<&Action> = options.iter().filter(|a| !tried.has(&key, a)).collect();
        let pool: Vec<&Action> = if untried.is_empty() {
            options.iter().collect()
        } else {
            untried
        };
        Ok(pool[self.rng.gen_range(0..pool.len())].clone())
    }

    fn run_policy(
        &mut self,
        policy: &ExplorationPolicyConfig,
        share: usize,
    ) -> Result<PolicyTrajectories, (BackendError, PolicyTrajectories)> {
        let mut out = PolicyTrajectories {
            policy_id: policy.policy_id.clone(),
            episodes: Vec::new(),
        };
        let mut tried = Tried::default();
        let mut used = 0;
        while used < share {
            let (mut env, mut obs) = EnvHandle::open(Arc::clone(self.spec), policy.max_steps);
            self.seen.insert(ObservationKey::of(&obs));
            self.pages.insert(obs.page_id.clone());
            let mut episode = Vec::new();
            let mut just_probed = false;
            while used < share && !env.budget_exhausted() && !env.is_latched() {
                let choice = match policy.strategy {
                    Strategy::EntropyGreedy => Ok(self.choose_entropy(&obs)),
                    Strategy::BreadthFirstAffordance => {
                        Ok(self.choose_breadth(&obs, &tried, just_probed))
                    }
                    Strategy::DepthFirstRandom => {
                        self.choose_random(&obs, &tried, policy.temperature)
                    }
                };
                let action = match choice {
                    Ok(a) => Self::concretize(&obs, a, &mut tried),
                    Err(e) => {
                        out.episodes.push(episode);
                        return Err((e, out));
                    }
                };
                let from_key = ObservationKey::of(&obs);
                let first_try = !tried.has(&from_key, &action);
                tried.mark(&from_key, &action);
                let next = env
                    .step(&action)
                    .expect("explorer never exceeds the episode limit");
                used += 1;
                self.steps_used += 1;
                self.seen.insert(ObservationKey::of(&next));
                self.pages.insert(next.page_id.clone());
                self.record(&obs, &action, &next);
                let to_key = ObservationKey::of(&next);
                just_probed = first_try && action != Action::Back && to_key != from_key;
                episode.push(ExploredStep {
                    from: obs,
                    action,
                    to: next.clone(),
                    irreversible: env.is_latched(),
                });
                obs = next;
                if let Some(err) = self.pending_error.take() {
                    out.episodes.push(episode);
                    return Err((err, out));
                }
            }
            out.episodes.push(episode);
        }
        Ok(out)
    }
}

/// Explores `spec` with each policy in turn, writing every executed
/// transition into `memory`. `backend`, when given, summarizes new edges and
/// drives the random explorer; without it summaries are derived locally.
pub fn run_exploration(
    spec: &Arc<SiteSpec>,
    policies: &[ExplorationPolicyConfig],
    budget: ExplorationBudget,
    backend: Option<&dyn PolicyBackend>,
    memory: &mut SiteMemory,
    seed: u64,
) -> Result<ExplorationReport, ExplorationError> {
    if policies.is_empty() {
        return Err(ExplorationError::NoPolicies);
    }
    let mut ex = Explorer {
        spec,
        backend,
        memory,
        budget,
        rng: ChaCha8Rng::seed_from_u64(seed),
        seen: BTreeSet::new(),
        pages: BTreeSet::new(),
        steps_used: 0,
        records_written: 0,
        pending_error: None,
    };
    let mut trajectories = Vec::new();
    let mut failure = None;
    for policy in policies {
        let remaining = budget.total_env_steps.saturating_sub(ex.steps_used);
        let share = budget.per_policy_steps.min(remaining);
        if share == 0 {
            break;
        }
        match ex.run_policy(policy, share) {
            Ok(t) => trajectories.push(t),
            Err((e, t)) => {
                trajectories.push(t);
                failure = Some(e);
                break;
            }
        }
    }
    let report = ExplorationReport {
        site_id: spec.site_id.clone(),
        trajectories,
        distinct_keys_visited: ex.seen.len(),
        distinct_pages_visited: ex.pages.len(),
        steps_used: ex.steps_used,
        records_written: ex.records_written,
        budget,
    };
    match failure {
        Some(error) => Err(ExplorationAborted {
            error,
            report: Box::new(report),
        }
        .into()),
        None => Ok(report),
    }
}

pub(crate) fn digest_line(step: &ExploredStep) -> String {
    let mut line = format!(
        "FROM PAGE {} ACTION {} TO PAGE {}",
        step.from.page_id,
        step.action.signature(),
        step.to.page_id
    );
    if let Action::Type { element_id, .. } = &step.action {
        if let Some(e) = step
            .from
            .element_index
            .iter()
            .find(|e| &e.element_id == element_id)
        {
            line.push_str(&format!(" INPUT LABEL \"{}\"", e.label));
        }
    }
    if let Some(f) = &step.to.flash {
        line.push_str(&format!(" FLASH: {f}"));
    }
    if step.irreversible {
        line.push_str(" IRREVERSIBLE");
    }
    line
}

/// Turns exploration trajectories into site facts via the summarizer role.
/// New facts are added to `memory.facts` and returned.
pub fn mine_trajectories(
    report: &ExplorationReport,
    backend: &dyn PolicyBackend,
    memory: &mut SiteMemory,
) -> Result<Vec<SemanticFact>, BackendError> {
    let mut events: Vec<String> = Vec::new();
    let mut plain: Vec<String> = Vec::new();
    for t in &report.trajectories {
        for ep in &t.episodes {
            for s in ep {
                let line = digest_line(s);
                let bucket = if s.to.flash.is_some() || s.irreversible {
                    &mut events
                } else {
                    &mut plain
                };
                // Repeated identical steps add nothing for the miner.
                if !bucket.contains(&line) {
                    bucket.push(line);
                }
            }
        }
    }
    // Flashes and irreversible steps each get their own request so one
    // notable event cannot mask another; plain navigation is batched.
    let batches = events.chunks(1).chain(plain.chunks(MINING_BATCH));
    let mut added = Vec::new();
    for batch in batches {
        let user = format!(
            "SITE: {}\nMODE: mine\nTRAJECTORY DIGEST:\n{}\n",
            report.site_id,
            batch.join("\n")
        );
        let req = GenerationRequest::new(
            RoleTag::Summarizer,
            SchemaId::FactsV1,
            "Extract site-specific rules from exploration logs: input formats, irreversible actions, capability limits and navigation hints.",
            user,
        );
        let out: FactsOutput = backend.generate(&req)?.decode(SchemaId::FactsV1)?;
        for f in out.facts {
            if let Some(id) = memory.facts.add_fact(
                &report.site_id,
                &f.statement,
                f.kind,
                FactSource::Exploration,
            ) {
                let fact = memory
                    .facts
                    .facts()
                    .iter()
                    .find(|x| x.fact_id == id)
                    .cloned()
                    .expect("just added");
                added.push(fact);
            }
        }
    }
    Ok(added)
}

/// True if any step in the report shows the invalid-format flash.
pub fn saw_invalid_format(report: &ExplorationReport) -> bool {
    report
        .trajectories
        .iter()
        .flat_map(|t| t.episodes.iter().flatten())
        .any(|s| s.to.flash.as_deref() == Some(FLASH_INVALID_FORMAT))
}
