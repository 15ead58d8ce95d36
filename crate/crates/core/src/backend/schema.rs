//! Versioned structured-output schemas exchanged with policy backends.
//!
//! Every backend response is a JSON document; it is accepted only if it
//! deserializes into the typed form for its schema and passes the extra
//! range checks below.

use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::env::Action;
use crate::memory::FactKind;
use crate::planner::ExplorationDigest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemaId {
    #[serde(rename = "plan.v1")]
    PlanV1,
    #[serde(rename = "candidates.v1")]
    CandidatesV1,
    #[serde(rename = "assessment.v1")]
    AssessmentV1,
    #[serde(rename = "summary.v1")]
    SummaryV1,
    #[serde(rename = "facts.v1")]
    FactsV1,
    #[serde(rename = "explore_step.v1")]
    ExploreStepV1,
    #[serde(rename = "digest.v1")]
    DigestV1,
}

impl SchemaId {
    pub const ALL: [SchemaId; 7] = [
        SchemaId::PlanV1,
        SchemaId::CandidatesV1,
        SchemaId::AssessmentV1,
        SchemaId::SummaryV1,
        SchemaId::FactsV1,
        SchemaId::ExploreStepV1,
        SchemaId::DigestV1,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::PlanV1 => "plan.v1",
            SchemaId::CandidatesV1 => "candidates.v1",
            SchemaId::AssessmentV1 => "assessment.v1",
            SchemaId::SummaryV1 => "summary.v1",
            SchemaId::FactsV1 => "facts.v1",
            SchemaId::ExploreStepV1 => "explore_step.v1",
            SchemaId::DigestV1 => "digest.v1",
        }
    }

    /// Short description of the expected shape, appended to prompts.
    pub fn shape_hint(self) -> &'static str {
        match self {
            SchemaId::PlanV1 => {
                r#"{"rationale": str, "subgoals": [{"text": str, "success_predicate": str}, ...]}"#
            }
            SchemaId::CandidatesV1 => {
                r#"{"candidates": [{"action": {"kind": "click"|"type"|"goto"|"back"|"stop", ...}, "reasoning": str}]}"#
            }
            SchemaId::AssessmentV1 => {
                r#"{"scores": {"goal_alignment": 0-10, "state_viability": 0-10, "action_coherence": 0-10, "plan_consistency": 0-10, "outcome_safety": 0-10}, "justification": str, "blockers": [str]} or {"satisfied": bool, "reason": str}"#
            }
            SchemaId::SummaryV1 => {
                r#"{"delta": str, "new_affordances": [str], "hazard_flag": bool, "notes": str|null}"#
            }
            SchemaId::FactsV1 => {
                r#"{"facts": [{"statement": str, "kind": "format_rule"|"hazard"|"capability_limit"|"navigation_hint"}]}"#
            }
            SchemaId::ExploreStepV1 => r#"{"choice": int|null, "reason": str}"#,
            SchemaId::DigestV1 => {
                r#"{"worked": [str], "failed": [str], "new_affordances": [str], "prerequisites": [str]}"#
            }
        }
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgoalOutput {
    pub text: String,
    pub success_predicate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOutput {
    #[serde(default)]
    pub rationale: String,
    pub subgoals: Vec<SubgoalOutput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutput {
    pub action: Action,
    #[serde(default)]
    pub reasoning: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatesOutput {
    pub candidates: Vec<CandidateOutput>,
}

/// The five-part critic rubric, each scored 0..=10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScores {
    pub goal_alignment: u8,
    pub state_viability: u8,
    pub action_coherence: u8,
    pub plan_consistency: u8,
    pub outcome_safety: u8,
}

impl RubricScores {
    pub fn uniform(score: u8) -> Self {
        RubricScores {
            goal_alignment: score,
            state_viability: score,
            action_coherence: score,
            plan_consistency: score,
            outcome_safety: score,
        }
    }

    pub fn as_array(&self) -> [u8; 5] {
        [
            self.goal_alignment,
            self.state_viability,
            self.action_coherence,
            self.plan_consistency,
            self.outcome_safety,
        ]
    }

    /// Mean score scaled to [0, 1].
    pub fn value(&self) -> f64 {
        let sum: u32 = self.as_array().iter().map(|&s| s as u32).sum();
        sum as f64 / 5.0 / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AssessmentOutput {
    Scored {
        scores: RubricScores,
        #[serde(default)]
        justification: String,
        #[serde(default)]
        blockers: Vec<String>,
    },
    Predicate {
        satisfied: bool,
        #[serde(default)]
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub delta: String,
    #[serde(default)]
    pub new_affordances: Vec<String>,
    #[serde(default)]
    pub hazard_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactOutput {
    pub statement: String,
    pub kind: FactKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactsOutput {
    pub facts: Vec<FactOutput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreStepOutput {
    #[serde(default)]
    pub choice: Option<usize>,
    #[serde(default)]
    pub reason: String,
}

fn decode<T: DeserializeOwned>(value: &Value) -> Result<T, String> {
    serde_json::from_value(value.clone()).map_err(|e| e.to_string())
}

/// Checks `value` against `schema`, returning a human-readable reason on failure.
pub fn validate(schema: SchemaId, value: &Value) -> Result<(), String> {
    match schema {
        SchemaId::PlanV1 => {
            let plan: PlanOutput = decode(value)?;
            if plan.subgoals.is_empty() {
                return Err("plan must contain at least one subgoal".into());
            }
            if plan.subgoals.iter().any(|s| s.text.trim().is_empty()) {
                return Err("subgoal text must be non-empty".into());
            }
        }
        SchemaId::CandidatesV1 => {
            decode::<CandidatesOutput>(value)?;
        }
        SchemaId::AssessmentV1 => {
            if let AssessmentOutput::Scored { scores, .. } = decode::<AssessmentOutput>(value)? {
                if scores.as_array().iter().any(|&s| s > 10) {
                    return Err("rubric scores must lie in 0..=10".into());
                }
            }
        }
        SchemaId::SummaryV1 => {
            let s: SummaryOutput = decode(value)?;
            if s.delta.trim().is_empty() {
                return Err("summary delta must be non-empty".into());
            }
        }
        SchemaId::FactsV1 => {
            let f: FactsOutput = decode(value)?;
            if f.facts.iter().any(|f| f.statement.trim().is_empty()) {
                return Err("fact statements must be non-empty".into());
            }
        }
        SchemaId::ExploreStepV1 => {
            decode::<ExploreStepOutput>(value)?;
        }
        SchemaId::DigestV1 => {
            decode::<ExplorationDigest>(value)?;
        }
    }
    Ok(())
}

/// Parses model text into JSON, tolerating a surrounding markdown code fence.
pub fn parse_json_text(text: &str) -> Result<Value, String> {
    let trimmed = text.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    serde_json::from_str(body.trim()).map_err(|e| format!("malformed JSON: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn plan_requires_subgoals() {
        assert!(validate(SchemaId::PlanV1, &json!({"subgoals": []})).is_err());
        assert!(validate(
            SchemaId::PlanV1,
            &json!({"subgoals": [{"text": "a", "success_predicate": "b"}]})
        )
        .is_ok());
    }

    #[test]
    fn assessment_forms() {
        let scored = json!({"scores": {"goal_alignment": 10, "state_viability": 10,
            "action_coherence": 10, "plan_consistency": 10, "outcome_safety": 0}});
        assert!(validate(SchemaId::AssessmentV1, &scored).is_ok());
        assert!(validate(SchemaId::AssessmentV1, &json!({"satisfied": true})).is_ok());
        let over = json!({"scores": {"goal_alignment": 11, "state_viability": 10,
            "action_coherence": 10, "plan_consistency": 10, "outcome_safety": 0}});
        assert!(validate(SchemaId::AssessmentV1, &over).is_err());
        assert!(validate(SchemaId::AssessmentV1, &json!({"verdict": "ok"})).is_err());
    }

    #[test]
    fn rubric_value_is_mean_over_ten() {
        assert_eq!(RubricScores::uniform(10).value(), 1.0);
        let unsafe_ = RubricScores {
            outcome_safety: 0,
            ..RubricScores::uniform(10)
        };
        assert!((unsafe_.value() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn candidates_reject_unknown_action() {
        let bad = json!({"candidates": [{"action": {"kind": "hover", "element_id": "x"}}]});
        assert!(validate(SchemaId::CandidatesV1, &bad).is_err());
    }

    #[test]
    fn fenced_json_is_accepted() {
        assert_eq!(
            parse_json_text("```json\n{\"a\":1}\n```").unwrap(),
            json!({"a": 1})
        );
        assert!(parse_json_text("{oops").is_err());
    }
}
