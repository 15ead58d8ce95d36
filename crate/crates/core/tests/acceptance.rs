//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Run with `cargo test -p atlas-core --test acceptance`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use atlas_core::actor_critic::{select_action, DecisionContext, LasConfig};
use atlas_core::backend::{record_session, ReplayBackend, ScriptedBackend};
use atlas_core::env::{Action, Observation, SiteSpec};
use atlas_core::explore::{
    coverage, run_exploration, ExplorationBudget, ExplorationPolicyConfig, Strategy,
};
use atlas_core::fixtures::{all_sites, shop_admin, suite_backend, suite_tasks};
use atlas_core::harness::{
    build_memories, run_ablation, run_episode, run_suite, site_index, suite_budget, LogRecord,
    MapSetting, RunConfig,
};
use atlas_core::memory::{
    load_map, save_map, uncertainty_from_counts, CognitiveMap, MapMode, ObservationKey, SiteMemory,
};
use atlas_core::memory::{OutcomeKind, PredictedOutcome};
use atlas_core::planner::{divergence, should_replan, ReplanConfig};
use atlas_core::state::AgentState;

use common::{defined_clicks, env_at, explored_sites, page_observation};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

struct Instance {
    site: String,
    page: String,
    candidates: Vec<Action>,
    depth: usize,
    continuation: BTreeMap<String, Action>,
    scores: BTreeMap<(String, String), [u8; 5]>,
    parallel: bool,
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let sites = explored_sites();
    let ids: Vec<&String> = sites.keys().collect();
    let site = ids[rng.gen_range(0..ids.len())].clone();
    let spec = &sites[&site].0;
    let pages: Vec<&String> = spec
        .pages
        .keys()
        .filter(|p| !defined_clicks(spec, p).is_empty())
        .collect();
    let page = pages[rng.gen_range(0..pages.len())].clone();
    let mut pool: Vec<Action> = defined_clicks(spec, &page)
        .into_iter()
        .map(|(a, _)| a)
        .collect();
    pool.push(Action::stop(""));
    pool.shuffle(rng);
    let k = rng.gen_range(1..=pool.len().min(4));
    let candidates = pool[..k].to_vec();
    let continuation = spec
        .pages
        .keys()
        .map(|p| {
            let mut opts: Vec<Action> = defined_clicks(spec, p)
                .into_iter()
                .map(|(a, _)| a)
                .collect();
            opts.push(Action::stop(""));
            (p.clone(), opts[rng.gen_range(0..opts.len())].clone())
        })
        .collect();
    let mut scores = BTreeMap::new();
    for c in &candidates {
        for p in spec.pages.keys() {
            let s: [u8; 5] = std::array::from_fn(|_| rng.gen_range(0..=10));
            scores.insert((c.signature(), p.clone()), s);
        }
    }
    Instance {
        site,
        page,
        candidates,
        depth: rng.gen_range(1..=3),
        continuation,
        scores,
        parallel: rng.gen_bool(0.3),
    }
}

fn rubric(s: &[u8; 5]) -> serde_json::Value {
    json!({"goal_alignment": s[0], "state_viability": s[1], "action_coherence": s[2], "plan_consistency": s[3], "outcome_safety": s[4]})
}

fn instance_backend(inst: &Instance) -> ScriptedBackend {
    let mut lines = vec![
        json!({"role": "actor", "match": "MODE: propose\n", "response": {
            "candidates": inst.candidates.iter().map(|a| json!({"action": a, "reasoning": ""})).collect::<Vec<_>>()
        }}),
    ];
    for (p, a) in &inst.continuation {
        lines.push(json!({"role": "actor", "regex": format!("PAGE: {}\nURL: [^\n]*\nMODE: continue\n", regex::escape(p)),
            "response": {"candidates": [{"action": a}]}}));
    }
    for ((sig, p), s) in &inst.scores {
        lines.push(json!({"role": "critic", "regex": format!("CANDIDATE: {}\nFINAL PAGE: {}\n", regex::escape(sig), regex::escape(p)),
            "response": {"scores": rubric(s)}}));
    }
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    ScriptedBackend::from_jsonl(&text).expect("instance rules")
}

/// Recorded-evidence uncertainty of taking `action` on `page`, from raw counts.
fn oracle_uncertainty(map: &CognitiveMap, key: &ObservationKey, action: &Action) -> f64 {
    let sig = action.signature();
    let counts: Vec<u64> = map
        .records()
        .iter()
        .filter(|r| &r.from_key == key && r.action_signature == sig)
        .map(|r| r.count)
        .collect();
    let total: u64 = counts.iter().sum();
    match counts.iter().max() {
        Some(&m) if m > 0 => 1.0 - m as f64 / (total as f64 + 1.0),
        _ => 1.0,
    }
}

/// Enumerates each candidate's rollout over the true site graph and returns
/// the index maximizing value × ∏(1 − U), ties to the lower index.
fn brute_force_choice(inst: &Instance, spec: &Arc<SiteSpec>, map: &CognitiveMap) -> usize {
    let mut keys: BTreeMap<String, ObservationKey> = BTreeMap::new();
    let mut key_of = |p: &str| {
        keys.entry(p.to_string())
            .or_insert_with(|| ObservationKey::of(&page_observation(spec, p)))
            .clone()
    };
    let mut best: Option<(f64, usize)> = None;
    for (i, root) in inst.candidates.iter().enumerate() {
        let mut page = inst.page.clone();
        let mut action = root.clone();
        let mut confidence = 1.0;
        let mut final_page = page.clone();
        for d in 0..inst.depth {
            if action.is_stop() {
                confidence *= 1.0 - 0.0;
                final_page = page.clone();
                break;
            }
            let el = action.element_id().unwrap().to_string();
            let to = spec.pages[&page]
                .transitions
                .iter()
                .find(|r| r.on == el)
                .unwrap()
                .to
                .clone();
            confidence *= 1.0 - oracle_uncertainty(map, &key_of(&page), &action);
            final_page = to.clone();
            if spec.is_hazard(&page, &el) || d + 1 == inst.depth {
                break;
            }
            page = to;
            action = inst.continuation[&page].clone();
        }
        let s = inst.scores[&(root.signature(), final_page)];
        let value = s.iter().map(|&x| x as u32).sum::<u32>() as f64 / 5.0 / 10.0;
        let weighted = value * confidence;
        if best.is_none_or(|(b, _)| weighted > b) {
            best = Some((weighted, i));
        }
    }
    best.unwrap().1
}

fn c1_selection_oracle() -> Outcome {
    let sites = explored_sites();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5e1ec7);
    let mut distinct_winners = BTreeSet::new();
    for n in 0..200 {
        let inst = random_instance(&mut rng);
        let (spec, memory) = &sites[&inst.site];
        let backend = instance_backend(&inst);
        let obs = page_observation(spec, &inst.page);
        let state = AgentState::default();
        let ctx = DecisionContext {
            site_id: &inst.site,
            goal: "oracle",
            plan: None,
            observation: &obs,
            summary: "",
            state: &state,
            facts: &[],
            map: Some(&memory.map),
            critic_sees_raw: false,
        };
        let cfg = LasConfig {
            n_candidates: inst.candidates.len(),
            depth: inst.depth,
            parallel: inst.parallel,
        };
        let sel = select_action(&ctx, &memory.map, &cfg, &backend)
            .map_err(|e| format!("instance {n}: {e}"))?;
        let expected = brute_force_choice(&inst, spec, &memory.map);
        ensure(sel.chosen.action == inst.candidates[expected], || {
            format!(
                "instance {n} ({} / {}, depth {}): chose {} but oracle picked {}",
                inst.site,
                inst.page,
                inst.depth,
                sel.chosen.action.signature(),
                inst.candidates[expected].signature()
            )
        })?;
        distinct_winners.insert(expected);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "200/200 instances match, winners at indices {distinct_winners:?}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------- 2

fn c2_uncertainty_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let oracle = |c: &[u64]| {
        let total: u64 = c.iter().sum();
        let max = *c.iter().max().unwrap();
        1.0 - max as f64 / (total as f64 + 1.0)
    };
    let mut conflicting_checked = 0;
    for n in 0..1000 {
        let len = rng.gen_range(1..=6);
        let counts: Vec<u64> = (0..len).map(|_| rng.gen_range(1..=50)).collect();
        let u = uncertainty_from_counts(&counts);
        ensure(u == oracle(&counts), || {
            format!("vector {n} {counts:?}: {u} != {}", oracle(&counts))
        })?;
        ensure((0.0..=1.0).contains(&u), || {
            format!("vector {n}: U={u} out of range")
        })?;
        let modal = counts.iter().enumerate().max_by_key(|(_, &c)| c).unwrap().0;
        let mut up = counts.clone();
        up[modal] += 1;
        ensure(uncertainty_from_counts(&up) < u, || {
            format!("vector {n} {counts:?}: modal increment did not lower U")
        })?;
        let max = counts[modal];
        if let Some(j) = (0..len).find(|&j| counts[j] < max) {
            let mut conflict = counts.clone();
            conflict[j] += 1;
            ensure(uncertainty_from_counts(&conflict) > u, || {
                format!("vector {n} {counts:?}: conflicting increment at {j} did not raise U")
            })?;
            conflicting_checked += 1;
        }
    }
    ensure(uncertainty_from_counts(&[]) == 1.0, || {
        "no evidence must give U=1".into()
    })?;
    Ok(format!(
        "1000 vectors, {conflicting_checked} with a conflicting count"
    ))
}

// ---------------------------------------------------------------- 3

fn obs_of(tokens: &BTreeSet<String>) -> Observation {
    Observation {
        page_id: "p".into(),
        url: String::new(),
        rendered_text: tokens.iter().cloned().collect::<Vec<_>>().join(" "),
        element_index: vec![],
        step_index: 0,
        flash: None,
    }
}

fn known(o: Observation) -> PredictedOutcome {
    PredictedOutcome {
        kind: OutcomeKind::Known {
            observation: o,
            summary: None,
        },
        uncertainty: 0.0,
    }
}

fn jaccard_distance(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.iter().filter(|t| b.contains(*t)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        1.0 - inter as f64 / union as f64
    }
}

fn c3_replan_trigger() -> Outcome {
    let universe = ["alpha", "beta", "gamma", "delta"];
    let sets: Vec<BTreeSet<String>> = (0u32..16)
        .map(|m| {
            universe
                .iter()
                .enumerate()
                .filter(|(i, _)| m & (1 << i) != 0)
                .map(|(_, t)| t.to_string())
                .collect()
        })
        .collect();
    let d = |a: &BTreeSet<String>, b: &BTreeSet<String>| divergence(&obs_of(a), &known(obs_of(b)));
    let epsilons = [0.0, 0.25, 1.0 / 3.0, 0.5, 2.0 / 3.0, 0.75, 1.0];
    for a in &sets {
        ensure(d(a, a) == 0.0, || format!("d(x,x) != 0 for {a:?}"))?;
        for b in &sets {
            let ab = d(a, b);
            ensure((0.0..=1.0).contains(&ab), || format!("unbounded {ab}"))?;
            ensure(ab == d(b, a), || format!("asymmetric on {a:?} {b:?}"))?;
            ensure(ab == jaccard_distance(a, b), || {
                format!("{a:?} {b:?}: {ab} != oracle")
            })?;
            for c in &sets {
                ensure(ab <= d(a, c) + d(c, b) + 1e-12, || {
                    format!("triangle fails on {a:?} {b:?} {c:?}")
                })?;
            }
            for &eps in &epsilons {
                let cfg = ReplanConfig {
                    epsilon: eps,
                    enabled: true,
                };
                let fired = should_replan(&obs_of(a), &known(obs_of(b)), &cfg);
                ensure(fired == (ab > eps), || {
                    format!("trigger mismatch at eps={eps}, d={ab}")
                })?;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
    for n in 0..1000 {
        let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
            let k = rng.gen_range(0..12);
            words.choose_multiple(rng, k).cloned().collect()
        };
        let (a, b) = (pick(&mut rng), pick(&mut rng));
        let ab = d(&a, &b);
        ensure(ab == jaccard_distance(&a, &b), || {
            format!("random pair {n}: {ab} != oracle")
        })?;
        let eps = if rng.gen_bool(0.2) {
            ab
        } else {
            rng.gen_range(0.0..=1.0)
        };
        let cfg = ReplanConfig {
            epsilon: eps,
            enabled: true,
        };
        ensure(
            should_replan(&obs_of(&a), &known(obs_of(&b)), &cfg) == (ab > eps),
            || format!("random pair {n}: trigger mismatch"),
        )?;
    }
    Ok(format!(
        "{} exhaustive pairs x {} thresholds, 1000 random pairs",
        sets.len() * sets.len(),
        epsilons.len()
    ))
}

// ---------------------------------------------------------------- 4

fn c4_map_exactness() -> Outcome {
    let mut defined = 0;
    let mut undefined = 0;
    for (id, (spec, memory)) in explored_sites() {
        for (page_id, page) in &spec.pages {
            let (_, obs) = env_at(spec, page_id);
            let mut probes: Vec<Action> = page
                .elements
                .iter()
                .map(|e| Action::click(&e.element_id))
                .collect();
            probes.push(Action::click("not-on-this-page"));
            for action in probes {
                let el = action.element_id().unwrap().to_string();
                let rule = page
                    .element(&el)
                    .filter(|e| !e.kind.accepts_input())
                    .and(page.transitions.iter().find(|r| r.on == el));
                let got = memory.map.retrieve(&obs, &action);
                match rule {
                    Some(r) => {
                        let (mut env, _) = env_at(spec, page_id);
                        let truth = env.step(&action).unwrap();
                        ensure(truth.page_id == r.to, || {
                            format!("{id}: env disagrees with its own rule")
                        })?;
                        let predicted = got.observation();
                        ensure(!got.is_placeholder() && got.uncertainty < 1.0, || {
                            format!("{id}: {page_id} {} unknown", action.signature())
                        })?;
                        ensure(
                            predicted.page_id == truth.page_id
                                && ObservationKey::of(&predicted) == ObservationKey::of(&truth),
                            || {
                                format!(
                                    "{id}: {page_id} {} predicted {} but env gives {}",
                                    action.signature(),
                                    predicted.page_id,
                                    truth.page_id
                                )
                            },
                        )?;
                        defined += 1;
                    }
                    None => {
                        ensure(got.is_placeholder() && got.uncertainty == 1.0, || {
                            format!(
                                "{id}: {page_id} {} should be a placeholder",
                                action.signature()
                            )
                        })?;
                        undefined += 1;
                    }
                }
            }
        }
    }
    Ok(format!(
        "{defined} defined pairs exact, {undefined} undefined pairs placeholders"
    ))
}

// ---------------------------------------------------------------- 5

/// The action chosen on the sales page when both the hazard and the safe
/// button were proposed.
fn hazard_decision(
    config: &RunConfig,
    memory: &mut SiteMemory,
    seed: u64,
) -> Result<(String, String), String> {
    let task = suite_tasks()
        .into_iter()
        .find(|t| t.task_id == "shop-sales-total")
        .unwrap();
    let backend = suite_backend();
    let run = run_episode(&task, &shop_admin(), config, memory, &backend, seed);
    run.log
        .iter()
        .find_map(|r| match r {
            LogRecord::Step(s)
                if s.candidates
                    .iter()
                    .any(|c| c.action == "click(purge_sales)")
                    && s.candidates.len() >= 2 =>
            {
                Some((
                    s.candidates[0].action.clone(),
                    s.chosen.as_ref().map(Action::signature).unwrap_or_default(),
                ))
            }
            _ => None,
        })
        .ok_or_else(|| format!("{} seed {seed}: never faced the hazard choice", config.name))
}

fn c5_hazard_avoidance() -> Outcome {
    let full = RunConfig::preset("full").unwrap();
    let base = RunConfig::preset("base").unwrap();
    let backend = suite_backend();
    let sites = site_index([shop_admin()]);
    let (mut safe, mut hazardous) = (0, 0);
    for seed in 0..10u64 {
        let mut explored =
            build_memories(&sites, suite_budget(), seed, &backend).map_err(|e| e.to_string())?;
        let mut memory = explored.remove("shop-admin").unwrap();
        let (first, chosen) = hazard_decision(&full, &mut memory, seed)?;
        ensure(first == "click(purge_sales)", || {
            format!("seed {seed}: actor did not propose the hazard first")
        })?;
        safe += (chosen == "click(apply)") as usize;
        let mut empty = SiteMemory::new("shop-admin", MapMode::Summarized);
        let (first, chosen) = hazard_decision(&base, &mut empty, seed)?;
        hazardous += (chosen == first && chosen == "click(purge_sales)") as usize;
    }
    ensure(safe == 10 && hazardous == 10, || {
        format!("full safe {safe}/10, base hazardous {hazardous}/10")
    })?;
    Ok("full picks the safe action 10/10, base picks the hazardous first candidate 10/10".into())
}

// ---------------------------------------------------------------- 6

fn c6_exploration_coverage() -> Outcome {
    let spec = shop_admin();
    ensure(spec.pages.len() == 12, || {
        format!("shop-admin has {} pages", spec.pages.len())
    })?;
    let policy = [ExplorationPolicyConfig::new(
        "entropy",
        Strategy::EntropyGreedy,
        1.0,
        60,
    )];
    let mut worst = 40;
    for seed in 0..20 {
        let mut memory = SiteMemory::new("shop-admin", MapMode::Summarized);
        let report = run_exploration(
            &spec,
            &policy,
            ExplorationBudget::steps(40),
            None,
            &mut memory,
            seed,
        )
        .map_err(|e| e.to_string())?;
        let walked: usize = report.trajectories.iter().map(|t| t.steps()).sum();
        ensure(
            report.steps_used <= 40 && walked == report.steps_used,
            || {
                format!(
                    "seed {seed}: {} steps reported, {walked} walked",
                    report.steps_used
                )
            },
        )?;
        let cov = coverage(&report, &spec);
        ensure(cov == 1.0, || format!("seed {seed}: coverage {cov}"))?;
        let first_full = first_full_coverage_step(&report, &spec);
        worst = worst.min(40 - first_full);
    }
    Ok(format!(
        "coverage 1.0 on 20/20 seeds within 40 steps (slack at least {worst} steps)"
    ))
}

fn first_full_coverage_step(
    report: &atlas_core::explore::ExplorationReport,
    spec: &SiteSpec,
) -> usize {
    let mut seen: BTreeSet<&str> = BTreeSet::from([spec.start_page.as_str()]);
    let mut n = 0;
    for s in report
        .trajectories
        .iter()
        .flat_map(|t| t.episodes.iter().flatten())
    {
        n += 1;
        seen.insert(&s.to.page_id);
        if seen.len() == spec.pages.len() {
            return n;
        }
    }
    n
}

// ---------------------------------------------------------------- 7

fn c7_replay_determinism() -> Outcome {
    let sites = site_index(all_sites());
    let tasks = suite_tasks();
    let live = suite_backend();
    let memories = build_memories(&sites, suite_budget(), 0, &live).map_err(|e| e.to_string())?;
    let fresh = || {
        memories
            .iter()
            .map(|(k, m)| (k.clone(), m.detached()))
            .collect::<BTreeMap<_, _>>()
    };
    let mut out = Vec::new();
    for name in ["base", "full"] {
        let config = RunConfig::preset(name).unwrap();
        let recorder = record_session(suite_backend(), Vec::<u8>::new());
        let recorded = run_suite(&tasks, &sites, &mut fresh(), &config, &recorder)
            .map_err(|e| e.to_string())?;
        let tape = String::from_utf8(recorder.into_sink()).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut blobs = Vec::new();
        for dir in &dirs {
            let replay = ReplayBackend::from_jsonl(&tape).map_err(|e| e.to_string())?;
            let report = run_suite(&tasks, &sites, &mut fresh(), &config, &replay)
                .map_err(|e| e.to_string())?;
            ensure(replay.position() == replay.len(), || {
                format!("{name}: replay left calls unconsumed")
            })?;
            ensure(report.results().iter().all(|r| r.error.is_none()), || {
                format!("{name}: replay episode failed")
            })?;
            report.write(dir.path()).map_err(|e| e.to_string())?;
            blobs.push(snapshot(dir.path()));
        }
        ensure(blobs[0] == blobs[1], || {
            format!("{name}: replayed outputs differ")
        })?;
        let live_dir = tempfile::tempdir().unwrap();
        recorded.write(live_dir.path()).map_err(|e| e.to_string())?;
        ensure(snapshot(live_dir.path()) == blobs[0], || {
            format!("{name}: replay differs from the recorded run")
        })?;
        out.push(format!("{name}: {} files identical", blobs[0].len()));
    }
    Ok(out.join(", "))
}

fn snapshot(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                );
            }
        }
    }
    files
}

// ---------------------------------------------------------------- 8

fn c8_ablation_counters() -> Outcome {
    let sites = site_index(all_sites());
    let backend = suite_backend();
    let memories =
        build_memories(&sites, suite_budget(), 0, &backend).map_err(|e| e.to_string())?;
    let grid = RunConfig::preset_grid();
    ensure(grid.len() >= 4, || "preset grid too small".into())?;
    let mut lines = Vec::new();
    for cfg in &grid {
        let report = run_suite(
            &suite_tasks(),
            &sites,
            &mut memories
                .iter()
                .map(|(k, m)| (k.clone(), m.detached()))
                .collect(),
            cfg,
            &backend,
        )
        .map_err(|e| e.to_string())?;
        let total_reads: u64 = report.results().iter().map(|r| r.map_reads).sum();
        let selection_reads: u64 = report.results().iter().map(|r| r.selection_map_reads).sum();
        if cfg.components.cognitive_map == MapSetting::Off {
            ensure(total_reads == 0, || {
                format!("{}: {total_reads} map reads with the map off", cfg.name)
            })?;
        }
        if !cfg.components.lookahead {
            ensure(selection_reads == 0, || {
                format!(
                    "{}: {selection_reads} selection reads with look-ahead off",
                    cfg.name
                )
            })?;
        }
        lines.push(format!("{}={total_reads}/{selection_reads}", cfg.name));
    }
    Ok(format!("reads total/selection: {}", lines.join(" ")))
}

// ---------------------------------------------------------------- 9

fn synthetic_map(records: usize) -> CognitiveMap {
    let mut map = CognitiveMap::new("synthetic", MapMode::Summarized);
    let page = |i: usize| Observation {
        page_id: format!("p{i}"),
        url: format!("/p/{i}"),
        rendered_text: format!("Page {i}\nunicode ✓ \"quoted\" \\ text"),
        element_index: vec![],
        step_index: i,
        flash: i.is_multiple_of(7).then(|| "saved".to_string()),
    };
    for i in 0..records {
        let action = match i % 3 {
            0 => Action::click(format!("e{i}")),
            1 => Action::type_text(format!("in{i}"), format!("value {i}")),
            _ => Action::goto(format!("/p/{}", i + 1)),
        };
        map.record_transition(&page(i % 97), &action, &page(i + 1), None);
    }
    map
}

fn c9_persistence() -> Outcome {
    let map = synthetic_map(1000);
    ensure(map.len() == 1000, || format!("built {} records", map.len()))?;
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (
        dir.path().join("a.map.jsonl"),
        dir.path().join("b.map.jsonl"),
    );
    let start = Instant::now();
    save_map(&map, &a).map_err(|e| e.to_string())?;
    let loaded = load_map(&a).map_err(|e| e.to_string())?;
    save_map(&loaded, &b).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(loaded == map && loaded.records() == map.records(), || {
        "loaded map differs".into()
    })?;
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    ensure(ba == bb, || "re-save is not byte-identical".into())?;
    ensure(elapsed < Duration::from_secs(1), || {
        format!("round trip took {elapsed:?}")
    })?;
    Ok(format!("1000 records, {} bytes, {elapsed:.2?}", ba.len()))
}

// ---------------------------------------------------------------- 10

fn c10_ablation_shape() -> Outcome {
    let sites = site_index(all_sites());
    let backend = Arc::new(suite_backend());
    let memories =
        build_memories(&sites, suite_budget(), 0, backend.as_ref()).map_err(|e| e.to_string())?;
    let grid = RunConfig::preset_grid();
    let be = Arc::clone(&backend);
    let rows = run_ablation(
        &grid,
        &suite_tasks(),
        &sites,
        &memories,
        &move |_| Ok(be.clone()),
        None,
    )
    .map_err(|e| e.to_string())?;
    let rate = |name: &str| {
        rows.iter()
            .find(|r| r.config == name)
            .map(|r| r.metrics.overall_rate)
            .unwrap()
    };
    let solved = |name: &str| {
        rows.iter()
            .find(|r| r.config == name)
            .map(|r| r.metrics.successes)
            .unwrap()
    };
    let (full, cm, hl, base) = (rate("full"), rate("base_cm"), rate("base_hl"), rate("base"));
    let summary = rows
        .iter()
        .map(|r| format!("{}={}/{}", r.config, r.metrics.successes, r.metrics.total))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(full >= cm && cm >= base && full >= hl, || {
        format!("ordering violated: {summary}")
    })?;
    ensure(solved("full") >= 8, || {
        format!("full solved {} of 9", solved("full"))
    })?;
    Ok(summary)
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("selection matches brute-force oracle", c1_selection_oracle),
        ("uncertainty law", c2_uncertainty_law),
        ("replan trigger and divergence", c3_replan_trigger),
        ("cognitive map exactness", c4_map_exactness),
        ("hazard avoidance", c5_hazard_avoidance),
        ("exploration coverage and budget", c6_exploration_coverage),
        ("end-to-end replay determinism", c7_replay_determinism),
        ("ablation counters", c8_ablation_counters),
        ("map persistence round trip", c9_persistence),
        ("ablation ordering", c10_ablation_shape),
    ];
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("{:>2}. {name}", i + 1);
        if filter.as_ref().is_some_and(|f| !label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("[PASS] {label}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {label}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
