use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, EpisodeLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    Exact,
    FuzzyToken,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SuccessCriterion {
    AnswerMatch {
        expected: String,
        #[serde(default = "default_mode")]
        mode: MatchMode,
    },
    StatePredicate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        page_id: Option<String>,
        #[serde(default)]
        fields: BTreeMap<String, String>,
    },
}

fn default_mode() -> MatchMode {
    MatchMode::Exact
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub site_id: String,
    #[serde(rename = "goal")]
    pub goal_text: String,
    #[serde(rename = "category")]
    pub category_tag: String,
    pub success: SuccessCriterion,
    pub max_steps: usize,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps == 0 {
            return Err(EnvError::Validation {
                path: format!("tasks.{}.max_steps", self.task_id),
                detail: "max_steps must be at least 1".into(),
            });
        }
        Ok(())
    }
}

pub fn load_tasks_json(document: &str) -> Result<Vec<TaskSpec>, EnvError> {
    let tasks: Vec<TaskSpec> =
        serde_json::from_str(document).map_err(|e| EnvError::Parse(e.to_string()))?;
    for t in &tasks {
        t.validate()?;
    }
    Ok(tasks)
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>, EnvError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    load_tasks_json(&text)
}

/// Lowercased tokens with punctuation removed.
pub fn answer_tokens(text: &str) -> std::collections::BTreeSet<String> {
    text.split_whitespace()
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .collect::<String>()
                .to_lowercase()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Terminal success check for a finished episode.
pub fn evaluate(task: &TaskSpec, episode: &EpisodeLog) -> bool {
    match &task.success {
        SuccessCriterion::AnswerMatch { expected, mode } => match &episode.outcome.answer {
            None => false,
            Some(answer) => match mode {
                MatchMode::Exact => answer.trim() == expected.trim(),
                MatchMode::FuzzyToken => answer_tokens(answer) == answer_tokens(expected),
            },
        },
        SuccessCriterion::StatePredicate { page_id, fields } => {
            let page_ok = page_id
                .as_ref()
                .is_none_or(|p| *p == episode.outcome.page_id);
            page_ok
                && fields
                    .iter()
                    .all(|(k, v)| episode.outcome.fields.get(k).is_some_and(|got| got == v))
        }
    }
}
