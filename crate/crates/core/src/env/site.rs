//! Site fixtures: pages, elements, and the deterministic transition rules
//! that make up one simulated web site.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Link,
    Button,
    Textbox,
    Select,
}

impl ElementKind {
    pub fn accepts_input(self) -> bool {
        matches!(self, ElementKind::Textbox | ElementKind::Select)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Link => "link",
            ElementKind::Button => "button",
            ElementKind::Textbox => "textbox",
            ElementKind::Select => "select",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    #[serde(rename = "id")]
    pub element_id: String,
    pub kind: ElementKind,
    pub label: String,
    /// Regex a typed value must match; violations flash "invalid format".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_format: Option<String>,
}

/// `{on, when, to, effects}`: activating `on` moves to `to` when every
/// `when` input (keyed by element id on the same page) matches its pattern.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRule {
    pub on: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub when: BTreeMap<String, String>,
    pub to: String,
    /// Field assignments; `${element_id}` expands to the typed input value.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub effects: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    #[serde(skip)]
    pub page_id: String,
    pub url: String,
    /// Static text; `${field}` expands to the current value of a state field.
    #[serde(rename = "text", default)]
    pub static_text: String,
    #[serde(default)]
    pub elements: Vec<Element>,
    #[serde(default)]
    pub transitions: Vec<TransitionRule>,
    /// One-shot notification shown on arrival.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flash: Option<String>,
}

impl Page {
    pub fn element(&self, element_id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.element_id == element_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HazardRef {
    pub page: String,
    pub element: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SiteDocument {
    site_id: String,
    start_page: String,
    #[serde(default)]
    initial_fields: BTreeMap<String, String>,
    #[serde(default)]
    hazards: Vec<HazardRef>,
    #[serde(default)]
    pages: BTreeMap<String, Page>,
}

/// A validated, immutable site.
#[derive(Debug, Clone)]
pub struct SiteSpec {
    pub site_id: String,
    pub start_page: String,
    pub initial_fields: BTreeMap<String, String>,
    pub pages: BTreeMap<String, Page>,
    pub hazards: BTreeSet<HazardRef>,
    patterns: HashMap<String, Regex>,
    hazard_region: BTreeSet<String>,
}

impl SiteSpec {
    pub fn from_json(document: &str) -> Result<Self, EnvError> {
        let doc: SiteDocument =
            serde_json::from_str(document).map_err(|e| EnvError::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnvError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    fn from_document(mut doc: SiteDocument) -> Result<Self, EnvError> {
        let invalid = |path: String, detail: String| EnvError::Validation { path, detail };
        if !doc.pages.contains_key(&doc.start_page) {
            return Err(invalid(
                "start_page".into(),
                format!(
                    "start_page missing: '{}' is not a declared page",
                    doc.start_page
                ),
            ));
        }
        let mut patterns = HashMap::new();
        let mut compile = |pattern: &str, path: String| -> Result<(), EnvError> {
            if !patterns.contains_key(pattern) {
                let re = Regex::new(pattern).map_err(|e| invalid(path, e.to_string()))?;
                patterns.insert(pattern.to_string(), re);
            }
            Ok(())
        };
        let declared: BTreeSet<String> = doc.pages.keys().cloned().collect();
        for (page_id, page) in doc.pages.iter_mut() {
            page.page_id = page_id.clone();
            let base = format!("pages.{page_id}");
            if page.url.trim().is_empty() {
                return Err(invalid(
                    format!("{base}.url"),
                    "url must be non-empty".into(),
                ));
            }
            let mut seen = BTreeSet::new();
            for (i, el) in page.elements.iter().enumerate() {
                if !seen.insert(el.element_id.as_str()) {
                    return Err(invalid(
                        format!("{base}.elements[{i}]"),
                        format!("duplicate element id '{}'", el.element_id),
                    ));
                }
                if let Some(p) = &el.input_format {
                    compile(p, format!("{base}.elements[{i}].input_format"))?;
                }
            }
            for (i, rule) in page.transitions.iter().enumerate() {
                let rpath = format!("{base}.transitions[{i}]");
                if !declared.contains(&rule.to) {
                    return Err(invalid(
                        format!("{rpath}.to"),
                        format!("transition targets undeclared page '{}'", rule.to),
                    ));
                }
                match page.element(&rule.on) {
                    None => {
                        return Err(invalid(
                            format!("{rpath}.on"),
                            format!("unknown element '{}'", rule.on),
                        ))
                    }
                    Some(el) if el.kind.accepts_input() => {
                        return Err(invalid(
                            format!("{rpath}.on"),
                            format!("'{}' is an input and cannot be activated", rule.on),
                        ))
                    }
                    Some(_) => {}
                }
                for (field, pattern) in &rule.when {
                    match page.element(field) {
                        Some(el) if el.kind.accepts_input() => {}
                        _ => {
                            return Err(invalid(
                                format!("{rpath}.when.{field}"),
                                format!("'{field}' is not an input element on this page"),
                            ))
                        }
                    }
                    compile(pattern, format!("{rpath}.when.{field}"))?;
                }
            }
        }
        for (i, h) in doc.hazards.iter().enumerate() {
            let ok = doc
                .pages
                .get(&h.page)
                .and_then(|p| p.element(&h.element))
                .is_some();
            if !ok {
                return Err(invalid(
                    format!("hazards[{i}]"),
                    format!(
                        "hazard references undeclared element '{}' on '{}'",
                        h.element, h.page
                    ),
                ));
            }
        }
        let hazards: BTreeSet<HazardRef> = doc.hazards.into_iter().collect();
        let mut spec = SiteSpec {
            site_id: doc.site_id,
            start_page: doc.start_page,
            initial_fields: doc.initial_fields,
            pages: doc.pages,
            hazards,
            patterns,
            hazard_region: BTreeSet::new(),
        };
        spec.hazard_region = spec.compute_hazard_region()?;
        Ok(spec)
    }

    /// Pages reachable only through an irreversible element. Fails when a
    /// hazard region leads back into pages reachable without one.
    fn compute_hazard_region(&self) -> Result<BTreeSet<String>, EnvError> {
        let safe = self.reach(std::iter::once(self.start_page.clone()), false);
        let targets = self
            .pages
            .values()
            .flat_map(|p| {
                p.transitions
                    .iter()
                    .filter(move |r| self.is_hazard(&p.page_id, &r.on))
                    .map(|r| r.to.clone())
            })
            .collect::<Vec<_>>();
        let region = self.reach(targets, true);
        if let Some(leak) = region.intersection(&safe).next() {
            return Err(EnvError::Validation {
                path: format!("pages.{leak}"),
                detail: format!("page '{leak}' is reachable both before and after a hazard"),
            });
        }
        Ok(region)
    }

    fn reach(
        &self,
        from: impl IntoIterator<Item = String>,
        through_hazards: bool,
    ) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<String> = from.into_iter().collect();
        while let Some(id) = queue.pop_front() {
            if !seen.insert(id.clone()) {
                continue;
            }
            let page = &self.pages[&id];
            for rule in &page.transitions {
                if through_hazards || !self.is_hazard(&id, &rule.on) {
                    queue.push_back(rule.to.clone());
                }
            }
        }
        seen
    }

    pub fn is_hazard(&self, page_id: &str, element_id: &str) -> bool {
        self.hazards.contains(&HazardRef {
            page: page_id.to_string(),
            element: element_id.to_string(),
        })
    }

    pub fn in_hazard_region(&self, page_id: &str) -> bool {
        self.hazard_region.contains(page_id)
    }

    pub fn page(&self, page_id: &str) -> Option<&Page> {
        self.pages.get(page_id)
    }

    pub fn page_by_url(&self, url: &str) -> Option<&Page> {
        let wanted = normalize_url_path(url);
        self.pages
            .values()
            .find(|p| normalize_url_path(&p.url) == wanted)
    }

    pub(crate) fn pattern_matches(&self, pattern: &str, value: &str) -> bool {
        match self.patterns.get(pattern) {
            Some(re) => re.is_match(value),
            None => Regex::new(pattern)
                .map(|re| re.is_match(value))
                .unwrap_or(false),
        }
    }
}

/// Lowercased path component of a URL without query, fragment, or trailing slash.
pub fn normalize_url_path(url: &str) -> String {
    let mut rest = url.trim();
    if let Some(idx) = rest.find("://") {
        rest = &rest[idx + 3..];
        rest = rest.find('/').map(|i| &rest[i..]).unwrap_or("/");
    }
    let end = rest.find(['?', '#']).unwrap_or(rest.len());
    let path = rest[..end].trim_end_matches('/');
    let path = if path.is_empty() { "/" } else { path };
    let path = path.to_lowercase();
    if path.starts_with('/') {
        path
    } else {
        format!("/{path}")
    }
}
