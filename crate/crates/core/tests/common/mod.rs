#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, OnceLock};

use atlas_core::env::{Action, EnvHandle, Observation, SiteSpec};
use atlas_core::explore::{coverage, ExplorationBudget};
use atlas_core::fixtures::{all_sites, suite_backend};
use atlas_core::harness::{build_memory, site_index};
use atlas_core::memory::SiteMemory;

/// Clicks on `page` that have a transition rule, in element order.
pub fn defined_clicks(spec: &SiteSpec, page: &str) -> Vec<(Action, String)> {
    let p = &spec.pages[page];
    p.elements
        .iter()
        .filter(|e| !e.kind.accepts_input())
        .filter_map(|e| {
            p.transitions
                .iter()
                .find(|r| r.on == e.element_id)
                .map(|r| (Action::click(&e.element_id), r.to.clone()))
        })
        .collect()
}

/// Shortest click path from the start page to `page`, avoiding hazards.
pub fn path_to(spec: &SiteSpec, page: &str) -> Option<Vec<Action>> {
    let mut prev: BTreeMap<String, (String, Action)> = BTreeMap::new();
    let mut queue = VecDeque::from([spec.start_page.clone()]);
    let mut seen = vec![spec.start_page.clone()];
    while let Some(p) = queue.pop_front() {
        if p == page {
            let mut path = Vec::new();
            let mut cur = p;
            while let Some((from, a)) = prev.get(&cur) {
                path.push(a.clone());
                cur = from.clone();
            }
            path.reverse();
            return Some(path);
        }
        for (a, to) in defined_clicks(spec, &p) {
            if spec.is_hazard(&p, a.element_id().unwrap()) || seen.contains(&to) {
                continue;
            }
            seen.push(to.clone());
            prev.insert(to.clone(), (p.clone(), a));
            queue.push_back(to);
        }
    }
    None
}

/// A live environment standing on `page`, for hazard pages via their trigger.
pub fn env_at(spec: &Arc<SiteSpec>, page: &str) -> (EnvHandle, Observation) {
    let (mut env, mut obs) = EnvHandle::open(Arc::clone(spec), 100);
    let path = path_to(spec, page).or_else(|| {
        spec.hazards
            .iter()
            .find(|h| {
                defined_clicks(spec, &h.page)
                    .iter()
                    .any(|(a, to)| to == page && a.element_id() == Some(h.element.as_str()))
            })
            .map(|h| {
                let mut p = path_to(spec, &h.page).expect("hazard page reachable");
                p.push(Action::click(&h.element));
                p
            })
    });
    for a in path.unwrap_or_else(|| panic!("{page} unreachable")) {
        obs = env.step(&a).unwrap();
    }
    (env, obs)
}

pub fn page_observation(spec: &Arc<SiteSpec>, page: &str) -> Observation {
    env_at(spec, page).1
}

pub fn full_budget() -> ExplorationBudget {
    ExplorationBudget::new(600, 200, 10_000)
}

/// Every bundled site explored to full coverage with the bundled backend.
pub fn explored_sites() -> &'static BTreeMap<String, (Arc<SiteSpec>, SiteMemory)> {
    static CELL: OnceLock<BTreeMap<String, (Arc<SiteSpec>, SiteMemory)>> = OnceLock::new();
    CELL.get_or_init(|| {
        let backend = suite_backend();
        site_index(all_sites())
            .into_iter()
            .map(|(id, spec)| {
                let (memory, report) =
                    build_memory(&spec, full_budget(), 0, &backend).expect("exploration");
                assert_eq!(coverage(&report, &spec), 1.0, "{id} not fully covered");
                (id, (spec, memory))
            })
            .collect()
    })
}
