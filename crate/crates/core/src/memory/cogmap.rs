use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::key::ObservationKey;
use crate::backend::schema::SummaryOutput;
use crate::backend::{BackendError, GenerationRequest, PolicyBackend, RoleTag, SchemaId};
use crate::env::{Action, Observation};

pub const PLACEHOLDER_TEXT: &str = "UNEXPLORED STATE — outcome unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    Raw,
    #[default]
    Summarized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub delta: String,
    #[serde(default)]
    pub new_affordances: Vec<String>,
    #[serde(default)]
    pub hazard_flag: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl From<SummaryOutput> for TransitionSummary {
    fn from(s: SummaryOutput) -> Self {
        TransitionSummary {
            delta: s.delta,
            new_affordances: s.new_affordances,
            hazard_flag: s.hazard_flag,
            notes: s.notes,
        }
    }
}

impl TransitionSummary {
    /// Summary computed without a model: page change plus newly exposed labels.
    pub fn derive(from: &Observation, to: &Observation) -> Self {
        let delta = if from.page_id == to.page_id {
            match &to.flash {
                Some(f) => format!("stayed on {}; {}", to.page_id, f),
                None => format!("stayed on {}", to.page_id),
            }
        } else {
            format!("moved from {} to {}", from.page_id, to.page_id)
        };
        TransitionSummary {
            delta,
            new_affordances: new_element_labels(from, to),
            hazard_flag: to
                .flash
                .as_deref()
                .is_some_and(|f| f.contains("cannot be undone"))
                || to.rendered_text.contains("cannot be undone"),
            notes: None,
        }
    }
}

/// Labels of elements present in `to` but not in `from`.
pub fn new_element_labels(from: &Observation, to: &Observation) -> Vec<String> {
    to.element_index
        .iter()
        .filter(|e| {
            !from
                .element_index
                .iter()
                .any(|f| f.element_id == e.element_id)
        })
        .map(|e| e.label.clone())
        .collect()
}

/// Edge signature in the map. Typed text is dropped because keys ignore
/// input values, so every `type` on an element lands on the same key.
pub fn edge_signature(action: &Action) -> String {
    match action {
        Action::Type { element_id, .. } => format!("type({element_id})"),
        other => other.signature(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub from_key: ObservationKey,
    pub action_signature: String,
    pub action: Action,
    pub to_key: ObservationKey,
    pub raw_to_observation: Observation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<TransitionSummary>,
    pub count: u64,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum OutcomeKind {
    Known {
        observation: Observation,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        summary: Option<TransitionSummary>,
    },
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedOutcome {
    pub kind: OutcomeKind,
    pub uncertainty: f64,
}

impl PredictedOutcome {
    pub fn placeholder() -> Self {
        PredictedOutcome {
            kind: OutcomeKind::Placeholder,
            uncertainty: 1.0,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self.kind, OutcomeKind::Placeholder)
    }

    /// The predicted observation, or the sentinel for unexplored outcomes.
    pub fn observation(&self) -> Observation {
        match &self.kind {
            OutcomeKind::Known { observation, .. } => observation.clone(),
            OutcomeKind::Placeholder => placeholder_observation(),
        }
    }

    pub fn summary(&self) -> Option<&TransitionSummary> {
        match &self.kind {
            OutcomeKind::Known { summary, .. } => summary.as_ref(),
            OutcomeKind::Placeholder => None,
        }
    }

    pub fn hazard(&self) -> bool {
        self.summary().is_some_and(|s| s.hazard_flag)
    }

    pub fn page_id(&self) -> Option<&str> {
        match &self.kind {
            OutcomeKind::Known { observation, .. } => Some(&observation.page_id),
            OutcomeKind::Placeholder => None,
        }
    }
}

pub fn placeholder_observation() -> Observation {
    Observation {
        page_id: "unexplored".into(),
        url: String::new(),
        rendered_text: PLACEHOLDER_TEXT.into(),
        element_index: Vec::new(),
        step_index: 0,
        flash: None,
    }
}

/// U = 1 − max/(total + 1); 1 with no evidence.
pub fn uncertainty_from_counts(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    match counts.iter().max() {
        None | Some(0) => 1.0,
        Some(&max) => 1.0 - max as f64 / (total as f64 + 1.0),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordOutcome {
    pub inserted: bool,
    pub summarizer_error: Option<BackendError>,
}

/// Shared count of map reads (retrievals and uncertainty queries).
#[derive(Debug, Clone, Default)]
pub struct ReadCounter(Arc<AtomicU64>);

impl ReadCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Transition graph over observation keys.
#[derive(Debug, Clone)]
pub struct CognitiveMap {
    pub site_id: String,
    pub mode: MapMode,
    records: Vec<TransitionRecord>,
    index: HashMap<(ObservationKey, String), Vec<usize>>,
    seq: u64,
    reads: ReadCounter,
}

impl PartialEq for CognitiveMap {
    fn eq(&self, other: &Self) -> bool {
        self.site_id == other.site_id && self.mode == other.mode && self.records == other.records
    }
}

impl CognitiveMap {
    pub fn new(site_id: impl Into<String>, mode: MapMode) -> Self {
        CognitiveMap {
            site_id: site_id.into(),
            mode,
            records: Vec::new(),
            index: HashMap::new(),
            seq: 0,
            reads: ReadCounter::default(),
        }
    }

    pub(crate) fn from_records(
        site_id: String,
        mode: MapMode,
        records: Vec<TransitionRecord>,
    ) -> Self {
        let mut map = CognitiveMap::new(site_id, mode);
        for r in records {
            map.seq = map.seq.max(r.last_seq);
            map.index
                .entry((r.from_key.clone(), r.action_signature.clone()))
                .or_default()
                .push(map.records.len());
            map.records.push(r);
        }
        map
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn reads(&self) -> ReadCounter {
        self.reads.clone()
    }

    /// Copy of the map with its own read counter.
    pub fn detached(&self) -> Self {
        CognitiveMap {
            reads: ReadCounter::default(),
            ..self.clone()
        }
    }

    /// Switches the read mode; raw mode hides stored summaries.
    pub fn with_mode(mut self, mode: MapMode) -> Self {
        self.mode = mode;
        self
    }

    /// Distinct keys appearing on either side of an edge.
    pub fn node_keys(&self) -> Vec<ObservationKey> {
        let mut keys: Vec<ObservationKey> = self
            .records
            .iter()
            .flat_map(|r| [r.from_key.clone(), r.to_key.clone()])
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }

    /// Records an observed transition. A repeat of an existing edge bumps its
    /// count; a new edge is appended with a summary (unless in raw mode).
    /// When `summarizer` is `None` the summary is derived deterministically.
    pub fn record_transition(
        &mut self,
        o: &Observation,
        a: &Action,
        o_next: &Observation,
        summarizer: Option<&dyn PolicyBackend>,
    ) -> RecordOutcome {
        let from_key = ObservationKey::of(o);
        let to_key = ObservationKey::of(o_next);
        let sig = edge_signature(a);
        self.seq += 1;
        let slot = (from_key.clone(), sig.clone());
        if let Some(ids) = self.index.get(&slot) {
            if let Some(&i) = ids.iter().find(|&&i| self.records[i].to_key == to_key) {
                let rec = &mut self.records[i];
                rec.count += 1;
                rec.last_seq = self.seq;
                return RecordOutcome::default();
            }
        }
        let mut outcome = RecordOutcome {
            inserted: true,
            summarizer_error: None,
        };
        let summary = match (self.mode, summarizer) {
            (MapMode::Raw, _) => None,
            (MapMode::Summarized, None) => Some(TransitionSummary::derive(o, o_next)),
            (MapMode::Summarized, Some(backend)) => {
                match summarize_transition(o, a, o_next, backend) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        tracing::warn!(error = %e, "summarizer failed; storing raw transition");
                        outcome.summarizer_error = Some(e);
                        None
                    }
                }
            }
        };
        self.index.entry(slot).or_default().push(self.records.len());
        self.records.push(TransitionRecord {
            from_key,
            action_signature: sig,
            action: a.clone(),
            to_key,
            raw_to_observation: o_next.clone(),
            summary,
            count: 1,
            last_seq: self.seq,
        });
        outcome
    }

    fn successors(&self, from: &ObservationKey, sig: &str) -> Vec<&TransitionRecord> {
        self.index
            .get(&(from.clone(), sig.to_string()))
            .map(|ids| ids.iter().map(|&i| &self.records[i]).collect())
            .unwrap_or_default()
    }

    fn uncertainty_of(succ: &[&TransitionRecord]) -> f64 {
        let counts: Vec<u64> = succ.iter().map(|r| r.count).collect();
        uncertainty_from_counts(&counts)
    }

    /// Predicted successor of taking `a` from `o`.
    pub fn retrieve(&self, o: &Observation, a: &Action) -> PredictedOutcome {
        self.reads.bump();
        self.retrieve_key(&ObservationKey::of(o), a)
    }

    fn retrieve_key(&self, key: &ObservationKey, a: &Action) -> PredictedOutcome {
        let succ = self.successors(key, &edge_signature(a));
        let Some(best) = succ.iter().max_by_key(|r| (r.count, r.last_seq)) else {
            return PredictedOutcome::placeholder();
        };
        let summary = match self.mode {
            MapMode::Raw => None,
            MapMode::Summarized => best.summary.clone(),
        };
        PredictedOutcome {
            kind: OutcomeKind::Known {
                observation: best.raw_to_observation.clone(),
                summary,
            },
            uncertainty: Self::uncertainty_of(&succ),
        }
    }

    pub fn uncertainty(&self, o: &Observation, a: &Action) -> f64 {
        self.reads.bump();
        let succ = self.successors(&ObservationKey::of(o), &edge_signature(a));
        Self::uncertainty_of(&succ)
    }

    /// Outgoing edges from `key`, in insertion order.
    pub fn edges_from(&self, key: &ObservationKey) -> Vec<&TransitionRecord> {
        self.records.iter().filter(|r| &r.from_key == key).collect()
    }

    /// Uncertainty of the (from, signature) slot a record belongs to.
    pub fn slot_uncertainty(&self, record: &TransitionRecord) -> f64 {
        Self::uncertainty_of(&self.successors(&record.from_key, &record.action_signature))
    }
}

fn summarize_transition(
    o: &Observation,
    a: &Action,
    o_next: &Observation,
    backend: &dyn PolicyBackend,
) -> Result<TransitionSummary, BackendError> {
    let new = new_element_labels(o, o_next);
    let user = format!(
        "FROM PAGE: {}\nFROM URL: {}\nACTION: {}\nTO PAGE: {}\nTO URL: {}\nFLASH: {}\nNEW ELEMENTS: {}\nOBSERVATION:\n{}",
        o.page_id,
        o.url,
        a.signature(),
        o_next.page_id,
        o_next.url,
        o_next.flash.as_deref().unwrap_or("none"),
        if new.is_empty() { "(none)".to_string() } else { new.join(", ") },
        o_next.rendered_text,
    );
    let req = GenerationRequest::new(
        RoleTag::Summarizer,
        SchemaId::SummaryV1,
        "You summarize what a web action changed: the delta, newly available actions, and whether the outcome is irreversible.",
        user,
    );
    let out: SummaryOutput = backend.generate(&req)?.decode(SchemaId::SummaryV1)?;
    Ok(out.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ElementKind, ElementRef};
    use proptest::prelude::*;

    fn obs(page: &str, ids: &[&str]) -> Observation {
        Observation {
            page_id: page.into(),
            url: format!("/{page}"),
            rendered_text: format!("URL: /{page}"),
            element_index: ids
                .iter()
                .map(|id| ElementRef {
                    element_id: id.to_string(),
                    kind: ElementKind::Link,
                    label: id.to_string(),
                })
                .collect(),
            step_index: 0,
            flash: None,
        }
    }

    #[test]
    fn empty_map_gives_placeholder() {
        let map = CognitiveMap::new("s", MapMode::Summarized);
        let out = map.retrieve(&obs("k", &[]), &Action::click("x"));
        assert!(out.is_placeholder());
        assert_eq!(out.uncertainty, 1.0);
        assert_eq!(out.observation().rendered_text, PLACEHOLDER_TEXT);
    }

    #[test]
    fn repeat_edge_increments_count() {
        let mut map = CognitiveMap::new("s", MapMode::Summarized);
        let (k, p) = (obs("k", &["a"]), obs("p", &[]));
        assert!(
            map.record_transition(&k, &Action::click("a"), &p, None)
                .inserted
        );
        assert!(
            !map.record_transition(&k, &Action::click("a"), &p, None)
                .inserted
        );
        assert_eq!(map.len(), 1);
        assert_eq!(map.records()[0].count, 2);
        assert_eq!(
            map.retrieve(&k, &Action::click("a")).uncertainty,
            1.0 - 2.0 / 3.0
        );
    }

    #[test]
    fn conflicting_successors_coexist_modal_wins() {
        let mut map = CognitiveMap::new("s", MapMode::Summarized);
        let (k, p, q) = (obs("k", &["a"]), obs("p", &[]), obs("q", &["z"]));
        let a = Action::click("a");
        map.record_transition(&k, &a, &p, None);
        map.record_transition(&k, &a, &q, None);
        assert_eq!(map.len(), 2);
        // tie: most recent wins
        assert_eq!(map.retrieve(&k, &a).page_id(), Some("q"));
        map.record_transition(&k, &a, &p, None);
        map.record_transition(&k, &a, &p, None);
        let out = map.retrieve(&k, &a);
        assert_eq!(out.page_id(), Some("p"));
        assert!((out.uncertainty - (1.0 - 3.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn raw_mode_has_no_summaries() {
        let mut map = CognitiveMap::new("s", MapMode::Raw);
        let (k, p) = (obs("k", &["a"]), obs("p", &[]));
        map.record_transition(&k, &Action::click("a"), &p, None);
        assert!(map.records()[0].summary.is_none());
        assert!(map.retrieve(&k, &Action::click("a")).summary().is_none());
    }

    #[test]
    fn typed_text_shares_an_edge() {
        let mut map = CognitiveMap::new("s", MapMode::Summarized);
        let k = obs("k", &["date"]);
        map.record_transition(&k, &Action::type_text("date", "x"), &k, None);
        let out = map.retrieve(&k, &Action::type_text("date", "01/02/2024"));
        assert_eq!(out.page_id(), Some("k"));
    }

    #[test]
    fn reads_are_counted() {
        let map = CognitiveMap::new("s", MapMode::Summarized);
        let c = map.reads();
        map.retrieve(&obs("k", &[]), &Action::Back);
        map.uncertainty(&obs("k", &[]), &Action::Back);
        assert_eq!(c.get(), 2);
    }

    proptest! {
        #[test]
        fn uncertainty_law(counts in proptest::collection::vec(1u64..50, 1..8), pick in 0usize..8) {
            let u = uncertainty_from_counts(&counts);
            prop_assert!((0.0..=1.0).contains(&u));
            let modal = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
            let mut more = counts.clone();
            more[modal] += 1;
            prop_assert!(uncertainty_from_counts(&more) < u);
            let other = pick % (counts.len() + 1);
            if other == counts.len() || other != modal && counts[other] < counts[modal] {
                let mut conflict = counts.clone();
                if other == counts.len() { conflict.push(1) } else { conflict[other] += 1 }
                prop_assert!(uncertainty_from_counts(&conflict) > u);
            }
        }
    }
}
