use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{normalize_url_path, Observation};

/// Structural identity of an observation: normalized URL path plus the
/// sorted set of interactive element ids. Free text, flash messages and
/// the step index do not participate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObservationKey(pub String);

impl ObservationKey {
    pub fn of(obs: &Observation) -> Self {
        let mut ids: Vec<&str> = obs
            .element_index
            .iter()
            .map(|e| e.element_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        let mut h = Sha256::new();
        for id in ids {
            h.update(id.as_bytes());
            h.update([0]);
        }
        ObservationKey(format!(
            "{}#{}",
            normalize_url_path(&obs.url),
            hex::encode(&h.finalize()[..6])
        ))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The URL-path half of the key.
    pub fn path(&self) -> &str {
        self.0.split('#').next().unwrap_or("")
    }
}

impl fmt::Display for ObservationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn observation_key(obs: &Observation) -> ObservationKey {
    ObservationKey::of(obs)
}
