use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Observation};
use crate::memory::WorkingMemory;

pub const DEFAULT_HISTORY_LEN: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: Action,
    pub observation_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<String>,
}

/// Per-episode agent state: recent interaction history plus working memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    history: VecDeque<HistoryEntry>,
    history_len: usize,
    pub working: WorkingMemory,
    pub step_index: usize,
}

impl Default for AgentState {
    fn default() -> Self {
        Self::new(DEFAULT_HISTORY_LEN, WorkingMemory::default())
    }
}

impl AgentState {
    pub fn new(history_len: usize, working: WorkingMemory) -> Self {
        AgentState {
            history: VecDeque::new(),
            history_len: history_len.max(1),
            working,
            step_index: 0,
        }
    }

    /// Appends the action just executed and the observation it produced.
    pub fn record(&mut self, action: &Action, result: &Observation) {
        if self.history.len() == self.history_len {
            self.history.pop_front();
        }
        self.history.push_back(HistoryEntry {
            action: action.clone(),
            observation_digest: result.digest(),
            flash: result.flash.clone(),
        });
        self.step_index += 1;
    }

    pub fn history(&self) -> impl Iterator<Item = &HistoryEntry> {
        self.history.iter()
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Prompt block listing past actions and notes.
    pub fn render(&self) -> String {
        let mut out = String::from("HISTORY:\n");
        if self.history.is_empty() {
            out.push_str("(none)\n");
        }
        for h in &self.history {
            out.push_str(&format!("- {}", h.action.signature()));
            if let Some(f) = &h.flash {
                out.push_str(&format!(" -> {f}"));
            }
            out.push('\n');
        }
        if !self.working.is_empty() {
            out.push_str("NOTES:\n");
            for (step, note) in self.working.recent(10) {
                out.push_str(&format!("- [{step}] {note}\n"));
            }
        }
        out
    }
}
