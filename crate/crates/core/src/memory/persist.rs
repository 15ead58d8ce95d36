//! On-disk formats. Cognitive maps are JSON Lines with a header line;
//! fact files are a JSON array whose first element is the header.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::cogmap::{CognitiveMap, MapMode, TransitionRecord};
use super::semantic::{FactStore, SemanticFact};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PersistError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported {format} version {found} (expected {expected})")]
    VersionMismatch {
        format: String,
        found: u64,
        expected: u32,
    },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u64,
    site_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<MapMode>,
}

fn check_header(value: &Value, format: &str) -> Result<Header, PersistError> {
    let header: Header = serde_json::from_value(value.clone())
        .map_err(|e| PersistError::Parse(format!("header: {e}")))?;
    if header.format != format {
        return Err(PersistError::Parse(format!(
            "expected format '{format}', found '{}'",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION as u64 {
        return Err(PersistError::VersionMismatch {
            format: format.into(),
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(header)
}

pub fn map_to_string(map: &CognitiveMap) -> String {
    let header = Header {
        format: "cogmap".into(),
        version: FORMAT_VERSION as u64,
        site_id: map.site_id.clone(),
        mode: Some(map.mode),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in map.records() {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn map_from_str(text: &str) -> Result<CognitiveMap, PersistError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines
        .next()
        .ok_or_else(|| PersistError::Parse("missing header line".into()))?;
    let value: Value =
        serde_json::from_str(first).map_err(|e| PersistError::Parse(format!("header: {e}")))?;
    let header = check_header(&value, "cogmap")?;
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        let r: TransitionRecord = serde_json::from_str(line)
            .map_err(|e| PersistError::Parse(format!("record {}: {e}", n + 1)))?;
        if r.count == 0 {
            return Err(PersistError::Parse(format!(
                "record {}: count must be at least 1",
                n + 1
            )));
        }
        records.push(r);
    }
    Ok(CognitiveMap::from_records(
        header.site_id,
        header.mode.unwrap_or_default(),
        records,
    ))
}

pub fn facts_to_string(site_id: &str, facts: &FactStore) -> String {
    let mut items = vec![serde_json::to_value(Header {
        format: "facts".into(),
        version: FORMAT_VERSION as u64,
        site_id: site_id.into(),
        mode: None,
    })
    .expect("header serializes")];
    items.extend(
        facts
            .facts()
            .iter()
            .map(|f| serde_json::to_value(f).expect("fact serializes")),
    );
    let mut out = serde_json::to_string_pretty(&items).expect("facts serialize");
    out.push('\n');
    out
}

pub fn facts_from_str(text: &str) -> Result<(String, FactStore), PersistError> {
    let items: Vec<Value> =
        serde_json::from_str(text).map_err(|e| PersistError::Parse(e.to_string()))?;
    let (first, rest) = items
        .split_first()
        .ok_or_else(|| PersistError::Parse("missing header element".into()))?;
    let header = check_header(first, "facts")?;
    let facts = rest
        .iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value::<SemanticFact>(v.clone())
                .map_err(|e| PersistError::Parse(format!("fact {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header.site_id, FactStore::from_facts(facts)))
}

fn read(path: &Path) -> Result<String, PersistError> {
    std::fs::read_to_string(path).map_err(|e| PersistError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

fn write(path: &Path, text: &str) -> Result<(), PersistError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PersistError::Io {
            path: dir.display().to_string(),
            detail: e.to_string(),
        })?;
    }
    std::fs::write(path, text).map_err(|e| PersistError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

pub fn save_map(map: &CognitiveMap, path: impl AsRef<Path>) -> Result<(), PersistError> {
    write(path.as_ref(), &map_to_string(map))
}

pub fn load_map(path: impl AsRef<Path>) -> Result<CognitiveMap, PersistError> {
    map_from_str(&read(path.as_ref())?)
}

pub fn save_facts(
    site_id: &str,
    facts: &FactStore,
    path: impl AsRef<Path>,
) -> Result<(), PersistError> {
    write(path.as_ref(), &facts_to_string(site_id, facts))
}

pub fn load_facts(path: impl AsRef<Path>) -> Result<(String, FactStore), PersistError> {
    facts_from_str(&read(path.as_ref())?)
}

/// Conventional facts path next to a map file: `x.cogmap.jsonl` → `x.facts.json`.
pub fn facts_path_for(map_path: &Path) -> std::path::PathBuf {
    let name = map_path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("memory");
    let stem = name
        .strip_suffix(".cogmap.jsonl")
        .or_else(|| name.strip_suffix(".jsonl"))
        .unwrap_or(name);
    map_path.with_file_name(format!("{stem}.facts.json"))
}
