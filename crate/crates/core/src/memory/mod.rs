//! Working memory, the cognitive map (transition graph with summaries and
//! uncertainty) and semantic facts, plus their file formats.

mod cogmap;
mod key;
pub mod persist;
mod semantic;
mod working;

pub use cogmap::{
    edge_signature, new_element_labels, placeholder_observation, uncertainty_from_counts,
    CognitiveMap, MapMode, OutcomeKind, PredictedOutcome, ReadCounter, RecordOutcome,
    TransitionRecord, TransitionSummary, PLACEHOLDER_TEXT,
};
pub use key::{observation_key, ObservationKey};
pub use persist::{
    facts_path_for, load_facts, load_map, save_facts, save_map, PersistError, FORMAT_VERSION,
};
pub use semantic::{terms, FactKind, FactSource, FactStore, SemanticFact, DEFAULT_FACTS_K};
pub use working::{WorkingMemory, DEFAULT_WORKING_CAPACITY};

/// Long-term memory for one site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteMemory {
    pub map: CognitiveMap,
    pub facts: FactStore,
}

impl SiteMemory {
    pub fn new(site_id: &str, mode: MapMode) -> Self {
        SiteMemory {
            map: CognitiveMap::new(site_id, mode),
            facts: FactStore::new(),
        }
    }

    pub fn site_id(&self) -> &str {
        &self.map.site_id
    }

    /// Copy whose map counts its reads separately from the original.
    pub fn detached(&self) -> Self {
        SiteMemory {
            map: self.map.detached(),
            facts: self.facts.clone(),
        }
    }
}
