//! Knowledge base: annotated input cards and per-object documentation.
//!
//! On-disk layout of a knowledge-base directory:
//!
//! ```text
//! manifest.json        corpus manifest (record ids, source paths, flags)
//! cards/<id>.json      one annotated card per record
//! docs.json            documentation store (array of AppDoc)
//! cards.idx            vector index over card summaries
//! docs.idx             vector index over object descriptions
//! ```

mod annotate;
mod docs;
mod manifest;
mod workflow;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hit::{Diagnostic, HitDocument};

pub use annotate::{
    annotate_card, annotation_response, annotation_stage, AnnotateError, CardSource, DEFAULT_ANNOTATION_ATTEMPTS,
};
pub use docs::{ingest_docs, IngestReport};
pub use manifest::{scan_repository, CorpusManifest, ManifestRecord};
pub use workflow::{run_annotation_workflow, selection_order, WorkflowOptions, WorkflowReport};

#[derive(Debug, Error)]
pub enum KbError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("malformed documentation dump {path} at line {line}, column {column}: {message}")]
    DumpFormat {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate documentation entry `{0}`")]
    DuplicateDoc(String),
    #[error("card {0} does not parse: {1:?}")]
    CardParse(String, Vec<Diagnostic>),
    #[error("unknown record `{0}`")]
    UnknownRecord(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KbError + '_ {
    move |source| KbError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, KbError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| KbError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes pretty JSON atomically (temp file + rename), so readers never see
/// a partial record.
pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), KbError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

/// A corpus card with its retrieval summary and commented content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedCard {
    pub name: String,
    pub summary: String,
    pub content: String,
    pub source_path: String,
    pub apps_used: Vec<String>,
}

/// Documentation for one object type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDoc {
    pub app_name: String,
    pub description: String,
    pub param_docs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocStore {
    docs: BTreeMap<String, AppDoc>,
}

impl DocStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, doc: AppDoc) -> Result<(), KbError> {
        if self.docs.contains_key(&doc.app_name) {
            return Err(KbError::DuplicateDoc(doc.app_name));
        }
        self.docs.insert(doc.app_name.clone(), doc);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AppDoc> {
        self.docs.get(name)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &AppDoc> {
        self.docs.values()
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        let all: Vec<&AppDoc> = self.docs.values().collect();
        write_json(path, &all)
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        let all: Vec<AppDoc> = read_json(path)?;
        let mut store = DocStore::new();
        for d in all {
            store.insert(d)?;
        }
        Ok(store)
    }
}

/// Sorted, deduplicated `type` values found at any depth.
pub fn extract_apps(card: &HitDocument) -> Vec<String> {
    let mut apps: Vec<String> = card
        .all_blocks()
        .into_iter()
        .flat_map(|b| b.params.iter())
        .filter(|p| p.name == "type")
        .map(|p| p.value.unquoted().trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    apps.sort();
    apps.dedup();
    apps
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocLookup {
    pub found: Vec<AppDoc>,
    pub unknown: Vec<String>,
}

pub fn lookup_docs(apps: &[String], store: &DocStore) -> DocLookup {
    let mut out = DocLookup::default();
    for name in apps {
        match store.get(name) {
            Some(doc) => out.found.push(doc.clone()),
            None => out.unknown.push(name.clone()),
        }
    }
    out
}

/// Paths inside a knowledge-base directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KbPaths {
    pub root: PathBuf,
}

impl KbPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn cards_dir(&self) -> PathBuf {
        self.root.join("cards")
    }

    pub fn card(&self, record_id: &str) -> PathBuf {
        self.cards_dir().join(format!("{record_id}.json"))
    }

    pub fn docs(&self) -> PathBuf {
        self.root.join("docs.json")
    }

    pub fn card_index(&self) -> PathBuf {
        self.root.join("cards.idx")
    }

    pub fn doc_index(&self) -> PathBuf {
        self.root.join("docs.idx")
    }

    pub fn save_card(&self, record_id: &str, card: &AnnotatedCard) -> Result<(), KbError> {
        write_json(&self.card(record_id), card)
    }

    pub fn load_card(&self, record_id: &str) -> Result<AnnotatedCard, KbError> {
        read_json(&self.card(record_id))
    }

    /// Every persisted annotated card, keyed by record id.
    pub fn load_cards(&self) -> Result<BTreeMap<String, AnnotatedCard>, KbError> {
        let dir = self.cards_dir();
        let mut out = BTreeMap::new();
        if !dir.is_dir() {
            return Ok(out);
        }
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            out.insert(id.to_string(), read_json(&path)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hit::parse;

    fn doc(name: &str) -> AppDoc {
        AppDoc {
            app_name: name.into(),
            description: format!("{name} does things"),
            param_docs: BTreeMap::from([("variable".to_string(), "The variable".to_string())]),
        }
    }

    #[test]
    fn extract_apps_sorted_and_deduped() {
        let card = parse(
            "[Mesh]\n  type = GeneratedMesh\n[]\n[Kernels]\n  [a]\n    type = HeatConduction\n  []\n  [b]\n    type = HeatConduction\n  []\n[]\n",
        )
        .unwrap();
        assert_eq!(extract_apps(&card), vec!["GeneratedMesh", "HeatConduction"]);
        assert!(extract_apps(&parse("[Variables]\n  [u]\n  []\n[]\n").unwrap()).is_empty());
    }

    #[test]
    fn lookup_partitions_known_and_unknown() {
        let mut store = DocStore::new();
        store.insert(doc("GeneratedMesh")).unwrap();
        let r = lookup_docs(&["GeneratedMesh".into()], &store);
        assert_eq!(r.found.len(), 1);
        assert!(r.unknown.is_empty());
        let r = lookup_docs(&["X".into()], &store);
        assert!(r.found.is_empty());
        assert_eq!(r.unknown, vec!["X"]);
    }

    #[test]
    fn duplicate_doc_rejected() {
        let mut store = DocStore::new();
        store.insert(doc("A")).unwrap();
        assert!(matches!(store.insert(doc("A")), Err(KbError::DuplicateDoc(_))));
    }

    #[test]
    fn store_and_card_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let kb = KbPaths::new(dir.path());
        let mut store = DocStore::new();
        store.insert(doc("B")).unwrap();
        store.insert(doc("A")).unwrap();
        store.save(&kb.docs()).unwrap();
        assert_eq!(DocStore::load(&kb.docs()).unwrap(), store);

        let card = AnnotatedCard {
            name: "rod".into(),
            summary: "A rod.".into(),
            content: "[Mesh]\n[]\n".into(),
            source_path: "a/rod.i".into(),
            apps_used: vec![],
        };
        kb.save_card("abc", &card).unwrap();
        assert_eq!(kb.load_cards().unwrap().get("abc"), Some(&card));
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(kb.card("abc")).unwrap()).unwrap();
        let mut keys: Vec<_> = raw.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, vec!["apps_used", "content", "name", "source_path", "summary"]);
    }
}
