use std::fmt;

use serde::{Deserialize, Serialize};

/// An agent action against a page.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    Click { element_id: String },
    Type { element_id: String, text: String },
    Goto { url: String },
    Back,
    Stop { answer: String },
}

impl Action {
    pub fn click(element_id: impl Into<String>) -> Self {
        Action::Click {
            element_id: element_id.into(),
        }
    }

    pub fn type_text(element_id: impl Into<String>, text: impl Into<String>) -> Self {
        Action::Type {
            element_id: element_id.into(),
            text: text.into(),
        }
    }

    pub fn goto(url: impl Into<String>) -> Self {
        Action::Goto { url: url.into() }
    }

    pub fn stop(answer: impl Into<String>) -> Self {
        Action::Stop {
            answer: answer.into(),
        }
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, Action::Stop { .. })
    }

    /// Element targeted by the action, if any.
    pub fn element_id(&self) -> Option<&str> {
        match self {
            Action::Click { element_id } | Action::Type { element_id, .. } => Some(element_id),
            _ => None,
        }
    }

    /// Canonical string used as the action half of a cognitive-map edge key.
    pub fn signature(&self) -> String {
        match self {
            Action::Click { element_id } => format!("click({element_id})"),
            Action::Type { element_id, text } => format!("type({element_id},{})", quote(text)),
            Action::Goto { url } => format!("goto({url})"),
            Action::Back => "back".to_string(),
            Action::Stop { answer } => format!("stop({})", quote(answer)),
        }
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.signature())
    }
}
