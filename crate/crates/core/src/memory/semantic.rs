use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub const DEFAULT_FACTS_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactKind {
    FormatRule,
    Hazard,
    CapabilityLimit,
    NavigationHint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactSource {
    Exploration,
    OnlineUpdate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticFact {
    pub fact_id: String,
    pub site_id: String,
    pub statement: String,
    pub kind: FactKind,
    pub source: FactSource,
}

/// Lowercased alphanumeric tokens.
pub fn terms(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn normalize(statement: &str) -> String {
    statement
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Site-specific world knowledge: format rules, hazards, capability limits.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FactStore {
    facts: Vec<SemanticFact>,
}

impl FactStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_facts(facts: Vec<SemanticFact>) -> Self {
        FactStore { facts }
    }

    pub fn facts(&self) -> &[SemanticFact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    /// Adds a fact unless an equivalent statement exists for the site.
    /// Returns the new fact id, or `None` for a duplicate or empty statement.
    pub fn add_fact(
        &mut self,
        site_id: &str,
        statement: &str,
        kind: FactKind,
        source: FactSource,
    ) -> Option<String> {
        let norm = normalize(statement);
        if norm.is_empty() {
            return None;
        }
        if self
            .facts
            .iter()
            .any(|f| f.site_id == site_id && normalize(&f.statement) == norm)
        {
            return None;
        }
        let fact_id = format!("{site_id}-{:04}", self.facts.len() + 1);
        self.facts.push(SemanticFact {
            fact_id: fact_id.clone(),
            site_id: site_id.to_string(),
            statement: statement.trim().to_string(),
            kind,
            source,
        });
        Some(fact_id)
    }

    /// Facts for `site_id` sharing at least one term with `query`, most
    /// overlapping first, ties in insertion order, at most `k`.
    pub fn query_facts(&self, site_id: &str, query: &str, k: usize) -> Vec<&SemanticFact> {
        let q = terms(query);
        let mut scored: Vec<(usize, usize, &SemanticFact)> = self
            .facts
            .iter()
            .enumerate()
            .filter(|(_, f)| f.site_id == site_id)
            .map(|(i, f)| (terms(&f.statement).intersection(&q).count(), i, f))
            .filter(|(overlap, _, _)| *overlap > 0)
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(k).map(|(_, _, f)| f).collect()
    }
}
