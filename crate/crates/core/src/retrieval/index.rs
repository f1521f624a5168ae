//! Exact cosine-similarity index with a versioned binary on-disk format.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! magic    "HFVX"
//! version  u32            currently 1
//! dim      u32            0 for an index that never received a vector
//! count    u64
//! entries  count times:
//!            id_len u32, id bytes (UTF-8)
//!            kind u8 (0 = card, 1 = doc)
//!            record_len u32, record id bytes (UTF-8)
//!            dim times f64
//! checksum 32 bytes, SHA-256 of everything above
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::EmbeddingVector;

const MAGIC: &[u8; 4] = b"HFVX";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Card,
    Doc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordRef {
    pub kind: RecordKind,
    pub id: String,
}

impl RecordRef {
    pub fn card(id: impl Into<String>) -> Self {
        Self {
            kind: RecordKind::Card,
            id: id.into(),
        }
    }

    pub fn doc(id: impl Into<String>) -> Self {
        Self {
            kind: RecordKind::Doc,
            id: id.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub entry_id: String,
    pub vector: EmbeddingVector,
    pub payload: RecordRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub entry_id: String,
    pub score: f64,
    pub payload: RecordRef,
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate entry id `{0}`")]
    DuplicateId(String),
    #[error("dimension mismatch: index has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,
    #[error("k must be positive")]
    ZeroK,
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("index file is truncated")]
    Truncated,
    #[error("index checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed index file: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dim: Option<usize>,
    entries: Vec<IndexEntry>,
    norms: Vec<f64>,
    ids: HashSet<String>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dim(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            ..Self::default()
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn get(&self, entry_id: &str) -> Option<&IndexEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }

    fn check_dim(&self, actual: usize) -> Result<(), IndexError> {
        match self.dim {
            Some(expected) if expected != actual => Err(IndexError::DimensionMismatch { expected, actual }),
            _ => Ok(()),
        }
    }

    /// Adds an entry. The first vector fixes the index dimension.
    pub fn add(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        self.check_dim(entry.vector.dim())?;
        if self.ids.contains(&entry.entry_id) {
            return Err(IndexError::DuplicateId(entry.entry_id));
        }
        let norm = entry.vector.norm();
        if norm == 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        self.dim = Some(entry.vector.dim());
        self.ids.insert(entry.entry_id.clone());
        self.norms.push(norm);
        self.entries.push(entry);
        Ok(())
    }

    /// Exhaustive cosine scan. Hits are ordered by descending score, ties by
    /// ascending entry id.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check_dim(query.dim())?;
        let qnorm = query.norm();
        if qnorm == 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .zip(&self.norms)
            .enumerate()
            .map(|(i, (e, norm))| {
                let dot: f64 = e.vector.values().iter().zip(query.values()).map(|(a, b)| a * b).sum();
                ((dot / (norm * qnorm)).clamp(-1.0, 1.0), i)
            })
            .collect();
        scored.sort_by(|(sa, ia), (sb, ib)| {
            sb.partial_cmp(sa)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.entries[*ia].entry_id.cmp(&self.entries[*ib].entry_id))
        });
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(score, i)| SearchHit {
                entry_id: self.entries[i].entry_id.clone(),
                score,
                payload: self.entries[i].payload.clone(),
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim.unwrap_or(0) as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            put_str(&mut buf, &e.entry_id);
            buf.push(match e.payload.kind {
                RecordKind::Card => 0,
                RecordKind::Doc => 1,
            });
            put_str(&mut buf, &e.payload.id);
            for v in e.vector.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let dim = r.u32()? as usize;
        let count = r.u64()?;
        let mut index = if dim == 0 { VectorIndex::new() } else { VectorIndex::with_dim(dim) };
        for _ in 0..count {
            let entry_id = r.string()?;
            let kind = match r.take(1)?[0] {
                0 => RecordKind::Card,
                1 => RecordKind::Doc,
                other => return Err(IndexError::Malformed(format!("unknown record kind {other}"))),
            };
            let id = r.string()?;
            let mut values = Vec::with_capacity(dim);
            for _ in 0..dim {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            let vector = EmbeddingVector::new(values).map_err(|e| IndexError::Malformed(e.to_string()))?;
            index.add(IndexEntry {
                entry_id,
                vector,
                payload: RecordRef { kind, id },
            })?;
        }
        let body_len = r.pos;
        let stored = r.take(32)?;
        if r.pos != bytes.len() {
            return Err(IndexError::Malformed("trailing bytes after checksum".into()));
        }
        if Sha256::digest(&bytes[..body_len]).as_slice() != stored {
            return Err(IndexError::ChecksumMismatch);
        }
        Ok(index)
    }

    pub fn persist(&self, path: &Path) -> Result<(), IndexError> {
        let io = |source| IndexError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io)?;
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = std::fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).ok_or(IndexError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(IndexError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, IndexError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| IndexError::Malformed("entry id is not UTF-8".into()))
    }
}
