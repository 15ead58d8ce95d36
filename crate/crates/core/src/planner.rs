//! Subgoal plans: creation, progress tracking, divergence-triggered replanning.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::schema::{AssessmentOutput, PlanOutput, SubgoalOutput};
use crate::backend::{BackendError, GenerationRequest, PolicyBackend, RoleTag, SchemaId};
use crate::env::Observation;
use crate::memory::{PredictedOutcome, SemanticFact};
use crate::state::AgentState;

pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_REPLAN_CAP: usize = 3;

const PLANNER_SYSTEM: &str =
    "You are the planner of a web agent. Break the goal into a short ordered list of \
subgoals, each with a success predicate that can be checked against a single page.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgoalStatus {
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal {
    pub text: String,
    pub success_predicate: String,
    pub status: SubgoalStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub plan_id: String,
    pub subgoals: Vec<Subgoal>,
    pub revision: u32,
    pub rationale: String,
}

impl Plan {
    fn build(
        plan_id: String,
        revision: u32,
        rationale: String,
        mut subgoals: Vec<Subgoal>,
    ) -> Plan {
        if let Some(first) = subgoals
            .iter_mut()
            .find(|s| s.status != SubgoalStatus::Done)
        {
            first.status = SubgoalStatus::Active;
        }
        Plan {
            plan_id,
            subgoals,
            revision,
            rationale,
        }
    }

    pub fn active(&self) -> Option<(usize, &Subgoal)> {
        self.subgoals
            .iter()
            .enumerate()
            .find(|(_, s)| s.status == SubgoalStatus::Active)
    }

    pub fn is_complete(&self) -> bool {
        self.subgoals
            .iter()
            .all(|s| s.status == SubgoalStatus::Done)
    }

    pub fn done_count(&self) -> usize {
        self.subgoals
            .iter()
            .filter(|s| s.status == SubgoalStatus::Done)
            .count()
    }

    /// Plan text in the planner's output shape, without statuses.
    pub fn to_output(&self) -> PlanOutput {
        PlanOutput {
            rationale: self.rationale.clone(),
            subgoals: self
                .subgoals
                .iter()
                .map(|s| SubgoalOutput {
                    text: s.text.clone(),
                    success_predicate: s.success_predicate.clone(),
                })
                .collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("PLAN (revision {}):\n", self.revision);
        for (i, s) in self.subgoals.iter().enumerate() {
            let mark = match s.status {
                SubgoalStatus::Done => "x",
                SubgoalStatus::Active => ">",
                SubgoalStatus::Pending => " ",
            };
            out.push_str(&format!(
                "[{mark}] {}. {} (done when: {})\n",
                i + 1,
                s.text,
                s.success_predicate
            ));
        }
        out
    }

    /// Prompt line naming the subgoal the agent is working on.
    pub fn active_line(plan: Option<&Plan>) -> String {
        match plan.and_then(|p| p.active()) {
            Some((_, s)) => format!("ACTIVE SUBGOAL: {}", s.text),
            None if plan.is_some_and(|p| p.is_complete()) => {
                "ACTIVE SUBGOAL: (plan complete) stop with the answer".into()
            }
            None => "ACTIVE SUBGOAL: (none)".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationDigest {
    pub worked: Vec<String>,
    pub failed: Vec<String>,
    pub new_affordances: Vec<String>,
    pub prerequisites: Vec<String>,
}

impl ExplorationDigest {
    pub fn is_empty(&self) -> bool {
        self.worked.is_empty()
            && self.failed.is_empty()
            && self.new_affordances.is_empty()
            && self.prerequisites.is_empty()
    }

    pub fn render(&self) -> String {
        let list = |xs: &[String]| {
            if xs.is_empty() {
                "(none)".to_string()
            } else {
                xs.join("; ")
            }
        };
        format!(
            "DIGEST WORKED: {}\nDIGEST FAILED: {}\nDIGEST NEW AFFORDANCES: {}\nDIGEST PREREQUISITES: {}\n",
            list(&self.worked),
            list(&self.failed),
            list(&self.new_affordances),
            list(&self.prerequisites)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplanConfig {
    pub epsilon: f64,
    pub enabled: bool,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        ReplanConfig {
            epsilon: DEFAULT_EPSILON,
            enabled: true,
        }
    }
}

fn plan_id_for(goal: &str) -> String {
    let digest = Sha256::digest(goal.as_bytes());
    format!("plan-{}", hex::encode(&digest[..4]))
}

fn subgoals_from(output: PlanOutput) -> Vec<Subgoal> {
    output
        .subgoals
        .into_iter()
        .map(|s| Subgoal {
            text: s.text,
            success_predicate: s.success_predicate,
            status: SubgoalStatus::Pending,
        })
        .collect()
}

/// Initial plan for `goal` given the first observation.
pub fn make_plan(
    goal: &str,
    o0: &Observation,
    backend: &dyn PolicyBackend,
) -> Result<Plan, BackendError> {
    let user = format!(
        "GOAL: {goal}\nPAGE: {}\nOBSERVATION:\n{}",
        o0.page_id, o0.rendered_text
    );
    let req = GenerationRequest::new(RoleTag::Planner, SchemaId::PlanV1, PLANNER_SYSTEM, user);
    let out: PlanOutput = backend.generate(&req)?.decode(SchemaId::PlanV1)?;
    Ok(Plan::build(
        plan_id_for(goal),
        0,
        out.rationale.clone(),
        subgoals_from(out),
    ))
}

/// Lowercased alphanumeric tokens of the rendered text plus element ids.
pub fn observation_tokens(obs: &Observation) -> BTreeSet<String> {
    let mut set = crate::memory::terms(&obs.rendered_text);
    set.extend(
        obs.element_index
            .iter()
            .map(|e| e.element_id.to_lowercase()),
    );
    set
}

/// 1 − Jaccard similarity; two empty sets are identical.
pub fn token_divergence(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    1.0 - a.intersection(b).count() as f64 / union as f64
}

/// How far the observed page is from what the agent expected. A placeholder
/// expectation carries no prediction, so it never diverges.
pub fn divergence(observed: &Observation, expected: &PredictedOutcome) -> f64 {
    if expected.is_placeholder() {
        return 0.0;
    }
    token_divergence(
        &observation_tokens(observed),
        &observation_tokens(&expected.observation()),
    )
}

pub fn should_replan(
    observed: &Observation,
    expected: &PredictedOutcome,
    cfg: &ReplanConfig,
) -> bool {
    cfg.enabled && divergence(observed, expected) > cfg.epsilon
}

/// New plan revision. Completed subgoals are carried over unchanged; the
/// backend supplies the rest.
pub fn replan(
    goal: &str,
    o_t: &Observation,
    state: &AgentState,
    facts: &[&SemanticFact],
    digest: &ExplorationDigest,
    old: &Plan,
    backend: &dyn PolicyBackend,
) -> Result<Plan, BackendError> {
    let mut user = format!(
        "MODE: replan\nGOAL: {goal}\nCURRENT PLAN: {}\nPAGE: {}\nFLASH: {}\n",
        serde_json::to_string(&old.to_output()).expect("plan serializes"),
        o_t.page_id,
        o_t.flash.as_deref().unwrap_or("none"),
    );
    user.push_str(&old.render());
    user.push_str(&digest.render());
    user.push_str("FACTS:\n");
    for f in facts {
        user.push_str(&format!("- {}\n", f.statement));
    }
    user.push_str(&state.render());
    user.push_str(&format!("OBSERVATION:\n{}", o_t.rendered_text));
    let req = GenerationRequest::new(RoleTag::Planner, SchemaId::PlanV1, PLANNER_SYSTEM, user);
    let out: PlanOutput = backend.generate(&req)?.decode(SchemaId::PlanV1)?;

    let mut subgoals: Vec<Subgoal> = old
        .subgoals
        .iter()
        .filter(|s| s.status == SubgoalStatus::Done)
        .cloned()
        .collect();
    for s in subgoals_from(out.clone()) {
        if !subgoals.iter().any(|d| d.text == s.text) {
            subgoals.push(s);
        }
    }
    Ok(Plan::build(
        old.plan_id.clone(),
        old.revision + 1,
        out.rationale,
        subgoals,
    ))
}

/// Asks the critic whether the active subgoal's predicate holds on `o_t`;
/// while it does, marks it done and activates the next one.
pub fn advance_progress(
    plan: &Plan,
    o_t: &Observation,
    backend: &dyn PolicyBackend,
) -> Result<Plan, BackendError> {
    let mut next = plan.clone();
    while let Some((i, sub)) = next.active().map(|(i, s)| (i, s.clone())) {
        let user = format!(
            "MODE: predicate\nPREDICATE: {}\nPAGE: {}\nSUBGOAL: {}\nOBSERVATION:\n{}",
            sub.success_predicate, o_t.page_id, sub.text, o_t.rendered_text
        );
        let req = GenerationRequest::new(
            RoleTag::Critic,
            SchemaId::AssessmentV1,
            "Decide whether the success predicate holds on the current page. Answer with satisfied and reason.",
            user,
        );
        let satisfied = match backend
            .generate(&req)?
            .decode::<AssessmentOutput>(SchemaId::AssessmentV1)?
        {
            AssessmentOutput::Predicate { satisfied, .. } => satisfied,
            AssessmentOutput::Scored { .. } => {
                return Err(BackendError::SchemaViolation {
                    schema: SchemaId::AssessmentV1,
                    attempts: 1,
                    detail: "predicate check needs a satisfied field".into(),
                })
            }
        };
        if !satisfied {
            break;
        }
        next.subgoals[i].status = SubgoalStatus::Done;
        if let Some(s) = next
            .subgoals
            .iter_mut()
            .skip(i + 1)
            .find(|s| s.status == SubgoalStatus::Pending)
        {
            s.status = SubgoalStatus::Active;
        }
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::ScriptedBackend;
    use crate::env::{ElementKind, ElementRef};
    use crate::memory::OutcomeKind;
    use proptest::prelude::*;

    const RULES: &str = r#"
{"role":"planner","match":"GOAL: read sales","response":{"rationale":"r","subgoals":[{"text":"open reports","success_predicate":"page is reports"},{"text":"open sales","success_predicate":"page is sales"},{"text":"read","success_predicate":"page is never"}]}}
{"role":"planner","regex":"MODE: replan\nGOAL: [^\n]*\nCURRENT PLAN: (?P<plan>[^\n]*)\n","response_capture":"plan"}
{"role":"planner","fallback":true,"response":{"rationale":"fallback","subgoals":[{"text":"stop with empty answer","success_predicate":"stopped"}]}}
{"role":"critic","match":"PREDICATE: page is reports\nPAGE: reports","response":{"satisfied":true,"reason":"on reports"}}
{"role":"critic","match":"PREDICATE: page is sales\nPAGE: reports","response":{"satisfied":true,"reason":"skip"}}
{"role":"critic","fallback":true,"response":{"satisfied":false,"reason":"no"}}
"#;

    fn obs(page: &str, text: &str) -> Observation {
        Observation {
            page_id: page.into(),
            url: format!("/{page}"),
            rendered_text: text.into(),
            element_index: vec![],
            step_index: 0,
            flash: None,
        }
    }

    fn known(o: Observation) -> PredictedOutcome {
        PredictedOutcome {
            kind: OutcomeKind::Known {
                observation: o,
                summary: None,
            },
            uncertainty: 0.5,
        }
    }

    fn backend() -> ScriptedBackend {
        ScriptedBackend::from_jsonl(RULES).unwrap()
    }

    #[test]
    fn initial_plan_activates_first() {
        let p = make_plan("read sales", &obs("dashboard", ""), &backend()).unwrap();
        assert_eq!(p.revision, 0);
        assert_eq!(p.subgoals.len(), 3);
        assert_eq!(p.active().unwrap().0, 0);
        let empty = make_plan("", &obs("dashboard", ""), &backend()).unwrap();
        assert_eq!(empty.subgoals[0].text, "stop with empty answer");
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(
            divergence(&obs("a", "a b c"), &known(obs("a", "a b c"))),
            0.0
        );
        assert_eq!(divergence(&obs("a", "a b c"), &known(obs("a", "x y"))), 1.0);
        assert_eq!(
            divergence(&obs("a", "a b c"), &known(obs("a", "a b d"))),
            0.5
        );
        assert_eq!(
            divergence(&obs("a", "a b c"), &PredictedOutcome::placeholder()),
            0.0
        );
    }

    #[test]
    fn strict_trigger() {
        let cfg = ReplanConfig::default();
        assert!(!should_replan(
            &obs("a", "a b c"),
            &known(obs("a", "a b d")),
            &cfg
        ));
        assert!(should_replan(
            &obs("a", "a b c"),
            &known(obs("a", "x")),
            &cfg
        ));
        let off = ReplanConfig {
            enabled: false,
            ..cfg
        };
        assert!(!should_replan(
            &obs("a", "a b c"),
            &known(obs("a", "x")),
            &off
        ));
    }

    #[test]
    fn advance_cascades_and_stops() {
        let p = make_plan("read sales", &obs("dashboard", ""), &backend()).unwrap();
        let same = advance_progress(&p, &obs("dashboard", ""), &backend()).unwrap();
        assert_eq!(same, p);
        let moved = advance_progress(&p, &obs("reports", ""), &backend()).unwrap();
        assert_eq!(moved.done_count(), 2);
        assert_eq!(moved.active().unwrap().0, 2);
    }

    #[test]
    fn identity_replan_bumps_revision_only() {
        let b = backend();
        let p = make_plan("read sales", &obs("dashboard", ""), &b).unwrap();
        let p = advance_progress(&p, &obs("reports", ""), &b).unwrap();
        let state = AgentState::default();
        let r1 = replan(
            "read sales",
            &obs("x", ""),
            &state,
            &[],
            &ExplorationDigest::default(),
            &p,
            &b,
        )
        .unwrap();
        assert_eq!(r1.revision, 1);
        assert_eq!(r1.subgoals, p.subgoals);
        let r2 = replan(
            "read sales",
            &obs("x", ""),
            &state,
            &[],
            &ExplorationDigest::default(),
            &r1,
            &b,
        )
        .unwrap();
        assert_eq!(r2.revision, 2);
    }

    fn tokens_strategy() -> impl Strategy<Value = BTreeSet<String>> {
        proptest::collection::btree_set("[a-e]", 0..5)
    }

    proptest! {
        #[test]
        fn divergence_is_bounded_pseudometric(a in tokens_strategy(), b in tokens_strategy(), c in tokens_strategy()) {
            let ab = token_divergence(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, token_divergence(&b, &a));
            prop_assert_eq!(token_divergence(&a, &a), 0.0);
            // Jaccard distance satisfies the triangle inequality
            prop_assert!(token_divergence(&a, &c) <= ab + token_divergence(&b, &c) + 1e-12);
        }

        #[test]
        fn progress_never_regresses(pages in proptest::collection::vec(prop_oneof!["dashboard", "reports", "sales"], 1..8)) {
            let b = backend();
            let mut p = make_plan("read sales", &obs("dashboard", ""), &b).unwrap();
            for page in pages {
                let next = advance_progress(&p, &obs(&page, ""), &b).unwrap();
                for (old, new) in p.subgoals.iter().zip(&next.subgoals) {
                    prop_assert!(new.status >= old.status);
                }
                prop_assert!(next.subgoals.iter().filter(|s| s.status == SubgoalStatus::Active).count() <= 1);
                p = next;
            }
        }
    }

    #[test]
    fn element_ids_count_as_tokens() {
        let mut o = obs("a", "");
        o.element_index.push(ElementRef {
            element_id: "Apply".into(),
            kind: ElementKind::Button,
            label: "x".into(),
        });
        assert!(observation_tokens(&o).contains("apply"));
    }
}
