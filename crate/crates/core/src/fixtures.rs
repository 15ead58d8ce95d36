//! Bundled simulated sites, tasks, scripted rules and config presets.

use std::sync::Arc;

use crate::backend::{BackendError, ScriptedBackend, ScriptedRuleSet};
use crate::env::{load_tasks_json, SiteSpec, TaskSpec};

pub const SHOP_ADMIN_SITE: &str = include_str!("../fixtures/sites/shop-admin.site.json");
pub const CODE_HOST_SITE: &str = include_str!("../fixtures/sites/code-host.site.json");
pub const FORUM_SITE: &str = include_str!("../fixtures/sites/forum.site.json");
pub const SUITE_TASKS: &str = include_str!("../fixtures/tasks/suite.tasks.json");
pub const SUITE_RULES: &str = include_str!("../fixtures/rules/suite.rules.jsonl");

/// Preset name and its JSON document.
pub const PRESETS: [(&str, &str); 6] = [
    ("base", include_str!("../fixtures/configs/base.json")),
    (
        "base_cm_raw",
        include_str!("../fixtures/configs/base_cm_raw.json"),
    ),
    ("base_cm", include_str!("../fixtures/configs/base_cm.json")),
    ("base_hl", include_str!("../fixtures/configs/base_hl.json")),
    (
        "base_cm_hl",
        include_str!("../fixtures/configs/base_cm_hl.json"),
    ),
    ("full", include_str!("../fixtures/configs/full.json")),
];

fn site(doc: &str) -> Arc<SiteSpec> {
    Arc::new(SiteSpec::from_json(doc).expect("bundled site is valid"))
}

pub fn shop_admin() -> Arc<SiteSpec> {
    site(SHOP_ADMIN_SITE)
}

pub fn code_host() -> Arc<SiteSpec> {
    site(CODE_HOST_SITE)
}

pub fn forum() -> Arc<SiteSpec> {
    site(FORUM_SITE)
}

pub fn all_sites() -> Vec<Arc<SiteSpec>> {
    vec![shop_admin(), code_host(), forum()]
}

pub fn suite_tasks() -> Vec<TaskSpec> {
    load_tasks_json(SUITE_TASKS).expect("bundled tasks are valid")
}

pub fn suite_rules() -> Result<ScriptedRuleSet, BackendError> {
    ScriptedRuleSet::from_jsonl(SUITE_RULES)
}

pub fn suite_backend() -> ScriptedBackend {
    ScriptedBackend::new(suite_rules().expect("bundled rules are valid")).with_id("suite-scripted")
}

/// A bundled site by its id (`shop-admin`, `code-host`, `forum`).
pub fn site_by_name(name: &str) -> Option<Arc<SiteSpec>> {
    all_sites().into_iter().find(|s| s.site_id == name)
}
