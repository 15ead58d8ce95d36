//! The agent loop, run configuration, suite runner, metrics and ablations.

mod config;
mod episode;
mod suite;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use config::{
    BackendSelection, BackendSpec, Budgets, ComponentFlags, ConfigError, MapSetting, RunConfig,
};
pub use episode::{
    fallback_summary, run_episode, summarize_observation, CandidateLog, EpisodeError,
    EpisodeResult, EpisodeRun, LogRecord, StepLog, EPISODE_FORMAT,
};
pub use suite::{
    ablation_table, eval_dir, log_file_name, run_ablation, run_suite, AblationRow, CategoryRate,
    SuiteCounters, SuiteError, SuiteMetrics, SuiteReport, METRICS_FORMAT,
};

use crate::backend::{BackendError, PolicyBackend};
use crate::env::SiteSpec;
use crate::explore::{
    default_portfolio, mine_trajectories, run_exploration, ExplorationBudget, ExplorationError,
    ExplorationReport,
};
use crate::memory::{MapMode, SiteMemory};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Exploration(#[from] ExplorationError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Explores `spec` with the default portfolio and mines the trajectories
/// into facts. Returns the new memory and the exploration report.
pub fn build_memory(
    spec: &Arc<SiteSpec>,
    budget: ExplorationBudget,
    seed: u64,
    backend: &dyn PolicyBackend,
) -> Result<(SiteMemory, ExplorationReport), HarnessError> {
    let mut memory = SiteMemory::new(&spec.site_id, MapMode::Summarized);
    let report = run_exploration(
        spec,
        &default_portfolio(),
        budget,
        Some(backend),
        &mut memory,
        seed,
    )?;
    mine_trajectories(&report, backend, &mut memory)?;
    Ok((memory, report))
}

/// Exploration budget used to prepare memories for the bundled suite.
pub fn suite_budget() -> ExplorationBudget {
    ExplorationBudget::new(240, 80, 10_000)
}

/// One explored memory per site, keyed by site id.
pub fn build_memories(
    sites: &BTreeMap<String, Arc<SiteSpec>>,
    budget: ExplorationBudget,
    seed: u64,
    backend: &dyn PolicyBackend,
) -> Result<BTreeMap<String, SiteMemory>, HarnessError> {
    let mut out = BTreeMap::new();
    for (id, spec) in sites {
        out.insert(id.clone(), build_memory(spec, budget, seed, backend)?.0);
    }
    Ok(out)
}

pub fn site_index(
    sites: impl IntoIterator<Item = Arc<SiteSpec>>,
) -> BTreeMap<String, Arc<SiteSpec>> {
    sites.into_iter().map(|s| (s.site_id.clone(), s)).collect()
}
