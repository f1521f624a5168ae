use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::{io_err, read_json, write_json, KbError, KbPaths};
use crate::hit::CARD_EXTENSION;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub source_path: String,
    pub annotated: bool,
    pub record_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    /// Directory the source paths are relative to.
    #[serde(default)]
    pub root: String,
    pub records: Vec<ManifestRecord>,
}

/// Record ids are the first 16 hex digits of the SHA-256 of the card bytes.
pub fn record_id_for(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Lists every `.i` file under `root`, deduplicated by content hash. Files
/// that cannot be read are skipped with a warning.
pub fn scan_repository(root: &Path) -> Result<CorpusManifest, KbError> {
    std::fs::read_dir(root).map_err(io_err(root))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = match entry {
            Ok(e) => e,
            Err(e) => {
                log::warn!("skipping unreadable entry: {e}");
                continue;
            }
        };
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some(CARD_EXTENSION) {
            continue;
        }
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let id = record_id_for(&bytes);
        if !seen.insert(id.clone()) {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let source_path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        records.push(ManifestRecord {
            source_path,
            annotated: false,
            record_id: id,
        });
    }
    Ok(CorpusManifest {
        root: root.display().to_string(),
        records,
    })
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self, KbError> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        write_json(path, self)
    }

    pub fn get(&self, record_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.record_id == record_id)
    }

    pub fn mark_annotated(&mut self, record_id: &str) -> Result<(), KbError> {
        let rec = self
            .records
            .iter_mut()
            .find(|r| r.record_id == record_id)
            .ok_or_else(|| KbError::UnknownRecord(record_id.to_string()))?;
        rec.annotated = true;
        Ok(())
    }

    pub fn annotated_count(&self) -> usize {
        self.records.iter().filter(|r| r.annotated).count()
    }

    pub fn unannotated(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| !r.annotated)
    }

    /// Carries annotation flags over from a previous manifest for records
    /// that still exist.
    pub fn merge_from(&mut self, previous: &CorpusManifest) {
        let flags: BTreeMap<&str, bool> = previous
            .records
            .iter()
            .map(|r| (r.record_id.as_str(), r.annotated))
            .collect();
        for r in &mut self.records {
            if flags.get(r.record_id.as_str()).copied().unwrap_or(false) {
                r.annotated = true;
            }
        }
    }

    /// Marks records whose card file exists as annotated and clears the flag
    /// on records whose card file is missing. Returns the number of changes.
    pub fn reconcile(&mut self, kb: &KbPaths) -> usize {
        let mut changed = 0;
        for r in &mut self.records {
            let has_card = kb.load_card(&r.record_id).is_ok();
            if has_card != r.annotated {
                r.annotated = has_card;
                changed += 1;
            }
        }
        changed
    }

    /// Record ids are unique and every annotated record has a card file.
    pub fn validate(&self, kb: &KbPaths) -> Result<(), String> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(&r.record_id) {
                return Err(format!("duplicate record id {}", r.record_id));
            }
            if r.annotated && !kb.card(&r.record_id).is_file() {
                return Err(format!("annotated record {} has no card file", r.record_id));
            }
        }
        Ok(())
    }
}
