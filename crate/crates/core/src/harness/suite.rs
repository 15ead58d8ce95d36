use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::config::{MapSetting, RunConfig};
use super::episode::{run_episode, EpisodeResult, EpisodeRun, LogRecord};
use crate::backend::PolicyBackend;
use crate::env::{SiteSpec, TaskSpec};
use crate::memory::{MapMode, SiteMemory};

pub const METRICS_FORMAT: &str = "metrics.v1";

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("the suite has no tasks")]
    NoTasks,
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("{path}: {detail}")]
    Parse { path: String, detail: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> SuiteError {
    SuiteError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub successes: usize,
    pub total: usize,
    pub rate: f64,
}

impl CategoryRate {
    fn new(successes: usize, total: usize) -> Self {
        let rate = if total == 0 {
            0.0
        } else {
            successes as f64 / total as f64
        };
        CategoryRate {
            successes,
            total,
            rate,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteCounters {
    pub steps: usize,
    pub replans: usize,
    pub las_calls: usize,
    pub backend_tokens: u64,
    pub map_reads: u64,
    pub selection_map_reads: u64,
    pub failed_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteMetrics {
    pub format: String,
    pub config: String,
    pub per_category: BTreeMap<String, CategoryRate>,
    pub successes: usize,
    pub total: usize,
    pub overall_rate: f64,
    pub counters: SuiteCounters,
}

impl SuiteMetrics {
    pub fn from_results(config: &str, results: &[EpisodeResult]) -> Self {
        let mut tally: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut counters = SuiteCounters::default();
        for r in results {
            let e = tally.entry(r.category_tag.clone()).or_default();
            e.0 += r.success as usize;
            e.1 += 1;
            counters.steps += r.steps_taken;
            counters.replans += r.replans;
            counters.las_calls += r.las_calls;
            counters.backend_tokens += r.backend_tokens;
            counters.map_reads += r.map_reads;
            counters.selection_map_reads += r.selection_map_reads;
            counters.failed_episodes += r.error.is_some() as usize;
        }
        let successes = tally.values().map(|t| t.0).sum();
        let total = tally.values().map(|t| t.1).sum();
        SuiteMetrics {
            format: METRICS_FORMAT.into(),
            config: config.to_string(),
            per_category: tally
                .into_iter()
                .map(|(k, (s, t))| (k, CategoryRate::new(s, t)))
                .collect(),
            successes,
            total,
            overall_rate: CategoryRate::new(successes, total).rate,
            counters,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub metrics: SuiteMetrics,
    pub episodes: Vec<EpisodeRun>,
}

impl SuiteReport {
    pub fn results(&self) -> Vec<EpisodeResult> {
        self.episodes.iter().map(|e| e.result.clone()).collect()
    }

    /// Writes `episodes/<task>.s<seed>.jsonl` and `metrics.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SuiteError> {
        let episodes = dir.join("episodes");
        std::fs::create_dir_all(&episodes).map_err(|e| io_err(&episodes, e))?;
        for run in &self.episodes {
            let path = episodes.join(log_file_name(&run.result));
            std::fs::write(&path, run.log_jsonl()).map_err(|e| io_err(&path, e))?;
        }
        let path = dir.join("metrics.json");
        std::fs::write(&path, self.metrics.to_json()).map_err(|e| io_err(&path, e))
    }
}

pub fn log_file_name(result: &EpisodeResult) -> String {
    format!("{}.s{}.jsonl", result.task_id, result.seed)
}

fn missing_site(task: &TaskSpec, config: &RunConfig, seed: u64) -> EpisodeRun {
    let result = EpisodeResult {
        task_id: task.task_id.clone(),
        category_tag: task.category_tag.clone(),
        seed,
        success: false,
        steps_taken: 0,
        replans: 0,
        las_calls: 0,
        backend_tokens: 0,
        map_reads: 0,
        selection_map_reads: 0,
        wall_ms: 0,
        error: Some(format!("no site spec loaded for '{}'", task.site_id)),
    };
    let header = LogRecord::Header {
        format: super::episode::EPISODE_FORMAT.into(),
        config: config.name.clone(),
        task_id: task.task_id.clone(),
        site_id: task.site_id.clone(),
        category: task.category_tag.clone(),
        goal: task.goal_text.clone(),
        seed,
    };
    EpisodeRun {
        log: vec![header, LogRecord::Result(result.clone())],
        result,
    }
}

/// Runs every task once per configured seed. Each episode gets a fresh
/// environment; memories are shared per site and only written when online
/// updates are on. Sites without a memory start from an empty one.
pub fn run_suite(
    tasks: &[TaskSpec],
    sites: &BTreeMap<String, Arc<SiteSpec>>,
    memories: &mut BTreeMap<String, SiteMemory>,
    config: &RunConfig,
    backend: &dyn PolicyBackend,
) -> Result<SuiteReport, SuiteError> {
    if tasks.is_empty() {
        return Err(SuiteError::NoTasks);
    }
    let mode = config
        .components
        .cognitive_map
        .mode()
        .unwrap_or(MapMode::Summarized);
    for t in tasks {
        memories
            .entry(t.site_id.clone())
            .or_insert_with(|| SiteMemory::new(&t.site_id, mode));
    }
    let jobs: Vec<(&TaskSpec, u64)> = config
        .seeds
        .iter()
        .flat_map(|&s| tasks.iter().map(move |t| (t, s)))
        .collect();

    let parallel = config.workers > 1 && !config.components.online_memory_update;
    let episodes = if parallel {
        run_parallel(&jobs, sites, memories, config, backend)
    } else {
        jobs.iter()
            .map(|&(task, seed)| match sites.get(&task.site_id) {
                Some(spec) => {
                    let memory = memories.get_mut(&task.site_id).expect("inserted above");
                    run_episode(task, spec, config, memory, backend, seed)
                }
                None => missing_site(task, config, seed),
            })
            .collect()
    };
    let results: Vec<EpisodeResult> = episodes
        .iter()
        .map(|e: &EpisodeRun| e.result.clone())
        .collect();
    Ok(SuiteReport {
        metrics: SuiteMetrics::from_results(&config.name, &results),
        episodes,
    })
}

fn run_parallel(
    jobs: &[(&TaskSpec, u64)],
    sites: &BTreeMap<String, Arc<SiteSpec>>,
    memories: &BTreeMap<String, SiteMemory>,
    config: &RunConfig,
    backend: &dyn PolicyBackend,
) -> Vec<EpisodeRun> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<EpisodeRun>>> = Mutex::new(vec![None; jobs.len()]);
    std::thread::scope(|s| {
        for _ in 0..config.workers.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(task, seed)) = jobs.get(i) else {
                    break;
                };
                let run = match sites.get(&task.site_id) {
                    Some(spec) => {
                        // Read-only run: each episode works on a private copy.
                        let mut memory = memories[&task.site_id].detached();
                        run_episode(task, spec, config, &mut memory, backend, seed)
                    }
                    None => missing_site(task, config, seed),
                };
                slots.lock().unwrap()[i] = Some(run);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Recomputes suite metrics from the episode logs in `dir/episodes`.
pub fn eval_dir(dir: &Path) -> Result<SuiteMetrics, SuiteError> {
    let episodes = dir.join("episodes");
    let mut files: Vec<_> = std::fs::read_dir(&episodes)
        .map_err(|e| io_err(&episodes, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut config = String::new();
    let mut results = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut result = None;
        for (n, line) in text.lines().enumerate() {
            let rec: LogRecord = serde_json::from_str(line).map_err(|e| SuiteError::Parse {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", n + 1),
            })?;
            match rec {
                LogRecord::Header { config: c, .. } => config = c,
                LogRecord::Result(r) => result = Some(r),
                LogRecord::Step(_) => {}
            }
        }
        let r = result.ok_or_else(|| SuiteError::Parse {
            path: path.display().to_string(),
            detail: "no result record".into(),
        })?;
        results.push(r);
    }
    if results.is_empty() {
        return Err(SuiteError::NoTasks);
    }
    Ok(SuiteMetrics::from_results(&config, &results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub cognitive_map: MapSetting,
    pub high_level_plan: bool,
    pub lookahead: bool,
    pub metrics: SuiteMetrics,
}

/// Builds the backend for one config of a grid.
pub type BackendFactory = dyn Fn(&RunConfig) -> Result<Arc<dyn PolicyBackend>, super::ConfigError>;

/// Runs the suite under each config, each starting from its own copy of
/// `memories` so online updates never leak between rows.
pub fn run_ablation(
    configs: &[RunConfig],
    tasks: &[TaskSpec],
    sites: &BTreeMap<String, Arc<SiteSpec>>,
    memories: &BTreeMap<String, SiteMemory>,
    backend_for: &BackendFactory,
    out_dir: Option<&Path>,
) -> Result<Vec<AblationRow>, super::HarnessError> {
    let mut rows = Vec::new();
    for cfg in configs {
        let backend = backend_for(cfg)?;
        let mut mem: BTreeMap<String, SiteMemory> = memories
            .iter()
            .map(|(k, m)| (k.clone(), m.detached()))
            .collect();
        let report = run_suite(tasks, sites, &mut mem, cfg, backend.as_ref())?;
        if let Some(dir) = out_dir {
            report.write(&dir.join(&cfg.name))?;
        }
        rows.push(AblationRow {
            config: cfg.name.clone(),
            cognitive_map: cfg.components.cognitive_map,
            high_level_plan: cfg.components.high_level_plan,
            lookahead: cfg.components.lookahead,
            metrics: report.metrics,
        });
    }
    Ok(rows)
}

/// Markdown comparison table: one row per config, one column per category.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut categories: Vec<&String> = rows
        .iter()
        .flat_map(|r| r.metrics.per_category.keys())
        .collect();
    categories.sort();
    categories.dedup();
    let mut out = String::from("| Config | CM | HL | LA |");
    for c in &categories {
        out.push_str(&format!(" {c} |"));
    }
    out.push_str(" Overall |\n|---|---|---|---|");
    out.push_str(&"---|".repeat(categories.len() + 1));
    out.push('\n');
    let mark = |b: bool| if b { "yes" } else { "-" };
    for r in rows {
        let cm = match r.cognitive_map {
            MapSetting::Off => "-",
            MapSetting::Raw => "raw",
            MapSetting::Summarized => "yes",
        };
        out.push_str(&format!(
            "| {} | {cm} | {} | {} |",
            r.config,
            mark(r.high_level_plan),
            mark(r.lookahead)
        ));
        for c in &categories {
            match r.metrics.per_category.get(*c) {
                Some(cr) => out.push_str(&format!(" {:.1} |", cr.rate * 100.0)),
                None => out.push_str(" n/a |"),
            }
        }
        out.push_str(&format!(" {:.1} |\n", r.metrics.overall_rate * 100.0));
    }
    out
}
