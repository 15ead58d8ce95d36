use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WORKING_CAPACITY: usize = 50;

/// Bounded per-episode scratchpad; the oldest note is evicted first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkingMemory {
    entries: VecDeque<(usize, String)>,
    capacity: usize,
}

impl Default for WorkingMemory {
    fn default() -> Self {
        Self::new(DEFAULT_WORKING_CAPACITY)
    }
}

impl WorkingMemory {
    pub fn new(capacity: usize) -> Self {
        WorkingMemory {
            entries: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, step_index: usize, note: impl Into<String>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((step_index, note.into()));
    }

    pub fn entries(&self) -> impl Iterator<Item = &(usize, String)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Most recent `n` notes, oldest first.
    pub fn recent(&self, n: usize) -> Vec<&(usize, String)> {
        let skip = self.entries.len().saturating_sub(n);
        self.entries.iter().skip(skip).collect()
    }
}
