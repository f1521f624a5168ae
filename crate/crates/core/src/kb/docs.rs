use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use walkdir::WalkDir;

use super::{io_err, AppDoc, DocStore, KbError};

#[derive(Deserialize)]
struct DumpObject {
    #[serde(default)]
    description: String,
    #[serde(default)]
    parameters: BTreeMap<String, DumpParam>,
}

#[derive(Deserialize)]
struct DumpParam {
    #[serde(default)]
    description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub store: DocStore,
    /// Objects whose description was extended from a repository file.
    pub enriched: Vec<String>,
}

/// Builds the documentation store from a parameter dump, enriching object
/// descriptions from `<ObjectName>.md` files found under `repo`.
///
/// The dump is a JSON object mapping object name to
/// `{"description": .., "parameters": {name: {"description": ..}}}`.
pub fn ingest_docs(dump: &Path, repo: Option<&Path>) -> Result<IngestReport, KbError> {
    let text = std::fs::read_to_string(dump).map_err(io_err(dump))?;
    let objects: BTreeMap<String, DumpObject> = if text.trim().is_empty() {
        BTreeMap::new()
    } else {
        serde_json::from_str(&text).map_err(|e| KbError::DumpFormat {
            path: dump.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?
    };

    let md_files = match repo {
        Some(r) => markdown_files(r)?,
        None => HashMap::new(),
    };

    let mut store = DocStore::new();
    let mut enriched = Vec::new();
    for (name, obj) in objects {
        let mut description = obj.description.trim().to_string();
        if let Some(path) = md_files.get(&name) {
            let md = std::fs::read_to_string(path).map_err(io_err(path))?;
            let prose = markdown_prose(&md);
            if !prose.is_empty() {
                if !description.is_empty() {
                    description.push_str("\n\n");
                }
                description.push_str(&prose);
                enriched.push(name.clone());
            }
        }
        store.insert(AppDoc {
            app_name: name,
            description,
            param_docs: obj
                .parameters
                .into_iter()
                .map(|(k, v)| (k, v.description.trim().to_string()))
                .collect(),
        })?;
    }
    Ok(IngestReport { store, enriched })
}

fn markdown_files(repo: &Path) -> Result<HashMap<String, PathBuf>, KbError> {
    std::fs::read_dir(repo).map_err(io_err(repo))?;
    let mut out = HashMap::new();
    for entry in WalkDir::new(repo).sort_by_file_name().into_iter().filter_map(Result::ok) {
        let path = entry.path();
        if entry.file_type().is_file() && path.extension().and_then(|e| e.to_str()) == Some("md") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.entry(stem.to_string()).or_insert_with(|| path.to_path_buf());
            }
        }
    }
    Ok(out)
}

/// Plain paragraphs of a documentation page: headings, `!` directives and
/// fenced code are dropped.
fn markdown_prose(md: &str) -> String {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current = Vec::new();
    let mut in_code = false;
    for line in md.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            in_code = !in_code;
            continue;
        }
        if in_code || t.starts_with('#') || t.starts_with('!') {
            continue;
        }
        if t.is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join(" "));
                current.clear();
            }
            continue;
        }
        current.push(t);
    }
    if !current.is_empty() {
        paragraphs.push(current.join(" "));
    }
    paragraphs.join("\n\n")
}
