mod common;

use std::collections::BTreeMap;

use atlas_core::backend::{
    BackendError, GenerationRequest, GenerationResponse, PolicyBackend, ScriptedBackend,
};
use atlas_core::fixtures::{all_sites, shop_admin, suite_backend, suite_tasks};
use atlas_core::harness::{
    eval_dir, run_episode, run_suite, site_index, LogRecord, RunConfig, SuiteError, SuiteMetrics,
};
use atlas_core::memory::{MapMode, SiteMemory};

use common::explored_sites;

fn memories() -> BTreeMap<String, SiteMemory> {
    explored_sites()
        .iter()
        .map(|(k, (_, m))| (k.clone(), m.detached()))
        .collect()
}

/// Fails every call whose prompt mentions one site.
struct FailingFor<'a> {
    inner: ScriptedBackend,
    site: &'a str,
}

impl PolicyBackend for FailingFor<'_> {
    fn backend_id(&self) -> &str {
        "failing"
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        if request.render().contains(&format!("SITE: {}\n", self.site)) {
            return Err(BackendError::BackendUnavailable {
                attempts: 3,
                detail: "connection refused".into(),
            });
        }
        self.inner.generate(request)
    }
}

#[test]
fn full_config_solves_sales_total_within_eight_steps() {
    let task = suite_tasks()
        .into_iter()
        .find(|t| t.task_id == "shop-sales-total")
        .unwrap();
    let mut memory = memories().remove("shop-admin").unwrap();
    let run = run_episode(
        &task,
        &shop_admin(),
        &RunConfig::preset("full").unwrap(),
        &mut memory,
        &suite_backend(),
        0,
    );
    assert!(run.result.success, "{:?}", run.result);
    assert!(run.result.steps_taken <= 8);
    assert!(run.result.las_calls > 0);
}

#[test]
fn base_config_fires_the_hazard() {
    let task = suite_tasks()
        .into_iter()
        .find(|t| t.task_id == "shop-sales-total")
        .unwrap();
    let mut memory = SiteMemory::new("shop-admin", MapMode::Summarized);
    let run = run_episode(
        &task,
        &shop_admin(),
        &RunConfig::preset("base").unwrap(),
        &mut memory,
        &suite_backend(),
        0,
    );
    assert!(!run.result.success);
    assert_eq!(run.result.map_reads, 0);
}

#[test]
fn step_budget_ends_episode_as_failure() {
    let mut task = suite_tasks()
        .into_iter()
        .find(|t| t.task_id == "shop-pending")
        .unwrap();
    task.max_steps = 1;
    let mut memory = memories().remove("shop-admin").unwrap();
    let run = run_episode(
        &task,
        &shop_admin(),
        &RunConfig::preset("full").unwrap(),
        &mut memory,
        &suite_backend(),
        0,
    );
    assert!(!run.result.success);
    assert_eq!(run.result.steps_taken, 1);
}

#[test]
fn step_tokens_sum_to_episode_tokens() {
    let sites = site_index(all_sites());
    for name in ["base", "base_cm", "full"] {
        let report = run_suite(
            &suite_tasks(),
            &sites,
            &mut memories(),
            &RunConfig::preset(name).unwrap(),
            &suite_backend(),
        )
        .unwrap();
        for run in &report.episodes {
            let steps: u64 = run
                .log
                .iter()
                .filter_map(|r| {
                    if let LogRecord::Step(s) = r {
                        Some(s.tokens)
                    } else {
                        None
                    }
                })
                .sum();
            assert_eq!(
                steps, run.result.backend_tokens,
                "{name}/{}",
                run.result.task_id
            );
            assert!(run.result.backend_tokens > 0);
            let counted = run
                .log
                .iter()
                .filter(|r| matches!(r, LogRecord::Step(_)))
                .count();
            assert_eq!(counted, run.result.steps_taken);
        }
        assert_eq!(
            report.metrics.counters.backend_tokens,
            report
                .results()
                .iter()
                .map(|r| r.backend_tokens)
                .sum::<u64>()
        );
    }
}

#[test]
fn a_failing_site_does_not_affect_others() {
    let sites = site_index(all_sites());
    let config = RunConfig::preset("full").unwrap();
    let healthy = run_suite(
        &suite_tasks(),
        &sites,
        &mut memories(),
        &config,
        &suite_backend(),
    )
    .unwrap();
    let backend = FailingFor {
        inner: suite_backend(),
        site: "forum",
    };
    let broken = run_suite(&suite_tasks(), &sites, &mut memories(), &config, &backend).unwrap();
    for (a, b) in healthy.episodes.iter().zip(&broken.episodes) {
        if a.result.task_id.starts_with("forum") {
            assert!(!b.result.success);
            assert!(b.result.error.as_deref().unwrap().contains("unavailable"));
        } else {
            assert_eq!(a, b);
        }
    }
    assert_eq!(broken.metrics.per_category["forum"].successes, 0);
    assert_eq!(broken.metrics.counters.failed_episodes, 3);
}

#[test]
fn missing_site_is_a_failed_episode() {
    let sites = site_index([shop_admin()]);
    let report = run_suite(
        &suite_tasks(),
        &sites,
        &mut BTreeMap::new(),
        &RunConfig::preset("base").unwrap(),
        &suite_backend(),
    )
    .unwrap();
    assert_eq!(report.metrics.total, 9);
    let code = report
        .results()
        .into_iter()
        .find(|r| r.task_id == "code-issues")
        .unwrap();
    assert!(code.error.unwrap().contains("code-host"));
}

#[test]
fn empty_task_list_is_an_error() {
    let r = run_suite(
        &[],
        &site_index(all_sites()),
        &mut memories(),
        &RunConfig::default(),
        &suite_backend(),
    );
    assert!(matches!(r, Err(SuiteError::NoTasks)));
}

#[test]
fn parallel_workers_match_sequential_without_online_updates() {
    let sites = site_index(all_sites());
    let mut config = RunConfig::preset("base_cm_hl").unwrap();
    assert!(!config.components.online_memory_update);
    let sequential = run_suite(
        &suite_tasks(),
        &sites,
        &mut memories(),
        &config,
        &suite_backend(),
    )
    .unwrap();
    config.workers = 4;
    let mut shared = memories();
    let before: BTreeMap<String, SiteMemory> =
        shared.iter().map(|(k, m)| (k.clone(), m.clone())).collect();
    let parallel = run_suite(
        &suite_tasks(),
        &sites,
        &mut shared,
        &config,
        &suite_backend(),
    )
    .unwrap();
    assert_eq!(sequential.episodes, parallel.episodes);
    assert_eq!(
        shared, before,
        "read-only run must not touch the shared memory"
    );
}

#[test]
fn online_update_writes_into_shared_memory() {
    let sites = site_index(all_sites());
    let config = RunConfig::preset("full").unwrap();
    let mut shared = memories();
    let before: usize = shared
        .values()
        .map(|m| m.map.records().iter().map(|r| r.count).sum::<u64>() as usize)
        .sum();
    run_suite(
        &suite_tasks(),
        &sites,
        &mut shared,
        &config,
        &suite_backend(),
    )
    .unwrap();
    let after: usize = shared
        .values()
        .map(|m| m.map.records().iter().map(|r| r.count).sum::<u64>() as usize)
        .sum();
    assert!(after > before);
}

#[test]
fn multiple_seeds_replicate_each_task() {
    let sites = site_index(all_sites());
    let mut config = RunConfig::preset("base").unwrap();
    config.seeds = vec![1, 2, 3];
    let report = run_suite(
        &suite_tasks(),
        &sites,
        &mut memories(),
        &config,
        &suite_backend(),
    )
    .unwrap();
    assert_eq!(report.metrics.total, 27);
    assert_eq!(report.metrics.successes, 6);
}

#[test]
fn eval_recomputes_written_metrics() {
    let sites = site_index(all_sites());
    let report = run_suite(
        &suite_tasks(),
        &sites,
        &mut memories(),
        &RunConfig::preset("base_cm").unwrap(),
        &suite_backend(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    report.write(dir.path()).unwrap();
    let written: SuiteMetrics =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap())
            .unwrap();
    assert_eq!(written, report.metrics);
    assert_eq!(eval_dir(dir.path()).unwrap(), report.metrics);
    let first_line =
        std::fs::read_to_string(dir.path().join("episodes/shop-pending.s0.jsonl")).unwrap();
    assert!(first_line.starts_with("{\"record\":\"header\",\"format\":\"episode.v1\""));
}

#[test]
fn eval_reports_broken_logs_with_their_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("episodes")).unwrap();
    std::fs::write(dir.path().join("episodes/x.s0.jsonl"), "{not json}\n").unwrap();
    let err = eval_dir(dir.path()).unwrap_err().to_string();
    assert!(
        err.contains("x.s0.jsonl") && err.contains("line 1"),
        "{err}"
    );
}
