use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actor_critic::{DEFAULT_CANDIDATES, DEFAULT_DEPTH};
use crate::backend::{
    BackendError, PolicyBackend, RemoteBackend, RemoteConfig, ReplayBackend, RoleTag,
    RoutedBackend, ScriptedBackend, ScriptedRuleSet,
};
use crate::memory::{MapMode, DEFAULT_FACTS_K, DEFAULT_WORKING_CAPACITY};
use crate::planner::{DEFAULT_EPSILON, DEFAULT_REPLAN_CAP};
use crate::state::DEFAULT_HISTORY_LEN;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{path}: malformed config: {detail}")]
    Parse { path: String, detail: String },
    #[error("invalid config field '{field}': {detail}")]
    Validation { field: String, detail: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn invalid(field: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSetting {
    Off,
    Raw,
    Summarized,
}

impl MapSetting {
    pub fn mode(self) -> Option<MapMode> {
        match self {
            MapSetting::Off => None,
            MapSetting::Raw => Some(MapMode::Raw),
            MapSetting::Summarized => Some(MapMode::Summarized),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComponentFlags {
    pub cognitive_map: MapSetting,
    pub high_level_plan: bool,
    pub lookahead: bool,
    pub replanning: bool,
    pub online_memory_update: bool,
    /// With the critic off the actor's first candidate is executed.
    pub critic: bool,
    /// Critic prompts include raw predicted pages, not only summaries.
    pub critic_sees_raw: bool,
    /// Write simulated transitions of the chosen rollout into the map.
    pub memory_from_simulation: bool,
}

impl Default for ComponentFlags {
    fn default() -> Self {
        ComponentFlags {
            cognitive_map: MapSetting::Off,
            high_level_plan: false,
            lookahead: false,
            replanning: false,
            online_memory_update: false,
            critic: true,
            critic_sees_raw: true,
            memory_from_simulation: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    /// Character cap on the page text inside an observation summary.
    pub summary_cap: usize,
    pub history_len: usize,
    pub working_capacity: usize,
    pub facts_k: usize,
    pub replan_cap: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            summary_cap: 600,
            history_len: DEFAULT_HISTORY_LEN,
            working_capacity: DEFAULT_WORKING_CAPACITY,
            facts_k: DEFAULT_FACTS_K,
            replan_cap: DEFAULT_REPLAN_CAP,
        }
    }
}

/// Where one role's generations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    /// Rule files, merged in order.
    Scripted {
        rules: Vec<PathBuf>,
    },
    /// The rule table shipped with the fixture suite.
    BundledSuite,
    Replay {
        path: PathBuf,
    },
    Remote(RemoteConfig),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Arc<dyn PolicyBackend>, ConfigError> {
        Ok(match self {
            BackendSpec::Scripted { rules } => {
                let mut set = ScriptedRuleSet::default();
                for path in rules {
                    set = set.merge(ScriptedRuleSet::load(path)?);
                }
                Arc::new(ScriptedBackend::new(set))
            }
            BackendSpec::BundledSuite => Arc::new(crate::fixtures::suite_backend()),
            BackendSpec::Replay { path } => Arc::new(ReplayBackend::load(path)?),
            BackendSpec::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        })
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            BackendSpec::Scripted { rules } => rules.iter_mut().for_each(join),
            BackendSpec::Replay { path } => join(path),
            BackendSpec::BundledSuite | BackendSpec::Remote(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSelection {
    pub default: BackendSpec,
    #[serde(default)]
    pub roles: BTreeMap<RoleTag, BackendSpec>,
}

impl Default for BackendSelection {
    fn default() -> Self {
        BackendSelection {
            default: BackendSpec::BundledSuite,
            roles: BTreeMap::new(),
        }
    }
}

impl BackendSelection {
    pub fn build(&self) -> Result<Arc<dyn PolicyBackend>, ConfigError> {
        let default = self.default.build()?;
        if self.roles.is_empty() {
            return Ok(default);
        }
        let mut routed = RoutedBackend::new(default);
        for (role, spec) in &self.roles {
            routed = routed.route(*role, spec.build()?);
        }
        Ok(Arc::new(routed))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub components: ComponentFlags,
    pub n_candidates: usize,
    pub depth: usize,
    pub epsilon: f64,
    pub seeds: Vec<u64>,
    /// Episode threads; only used when online memory updates are off.
    pub workers: usize,
    /// Rollouts of one look-ahead round run on separate threads.
    pub parallel_rollouts: bool,
    /// Measure wall time; off keeps logs byte-reproducible.
    pub record_wall_time: bool,
    pub budgets: Budgets,
    pub backends: BackendSelection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "custom".into(),
            components: ComponentFlags::default(),
            n_candidates: DEFAULT_CANDIDATES,
            depth: DEFAULT_DEPTH,
            epsilon: DEFAULT_EPSILON,
            seeds: vec![0],
            workers: 1,
            parallel_rollouts: false,
            record_wall_time: false,
            budgets: Budgets::default(),
            backends: BackendSelection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(document: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(document).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            detail: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative backend paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.backends.default.resolve(base);
        for spec in cfg.backends.roles.values_mut() {
            spec.resolve(base);
        }
        Ok(cfg)
    }

    /// One of the bundled presets by name.
    pub fn preset(name: &str) -> Option<Self> {
        crate::fixtures::PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, doc)| Self::from_json(doc, n).expect("bundled preset is valid"))
    }

    /// The bundled ablation grid, in table order.
    pub fn preset_grid() -> Vec<Self> {
        crate::fixtures::PRESETS
            .iter()
            .map(|(n, doc)| Self::from_json(doc, n).expect("bundled preset is valid"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.components;
        if c.lookahead && c.cognitive_map == MapSetting::Off {
            return Err(invalid(
                "components.lookahead",
                "look-ahead needs cognitive_map raw or summarized",
            ));
        }
        if c.replanning && !c.high_level_plan {
            return Err(invalid(
                "components.replanning",
                "replanning needs high_level_plan",
            ));
        }
        if c.memory_from_simulation && !c.lookahead {
            return Err(invalid(
                "components.memory_from_simulation",
                "needs lookahead",
            ));
        }
        let positive = [
            ("n_candidates", self.n_candidates),
            ("depth", self.depth),
            ("workers", self.workers),
            ("budgets.summary_cap", self.budgets.summary_cap),
            ("budgets.history_len", self.budgets.history_len),
            ("budgets.working_capacity", self.budgets.working_capacity),
            ("budgets.facts_k", self.budgets.facts_k),
            ("budgets.replan_cap", self.budgets.replan_cap),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid("epsilon", "must lie in (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must be non-empty"));
        }
        Ok(())
    }

    /// Checks that a map is available for `site_id` when the config needs one.
    pub fn require_map(&self, site_id: &str, map_path: Option<&Path>) -> Result<(), ConfigError> {
        if !self.components.lookahead {
            return Ok(());
        }
        match map_path {
            None => Err(invalid(
                "components.lookahead",
                format!("look-ahead is enabled but no map was given for site '{site_id}'"),
            )),
            Some(p) if !p.exists() => Err(invalid(
                "components.lookahead",
                format!(
                    "look-ahead is enabled but map file {} does not exist",
                    p.display()
                ),
            )),
            Some(_) => Ok(()),
        }
    }
}
