use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("no replay embedding for text {0:?}")]
    ReplayMiss(String),
    #[error("embedding has dimension {actual}, index expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid embedding: {0}")]
    Invalid(String),
}

impl EmbedError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EmbedError::Transport(_))
    }
}

/// Fixed-length embedding with finite components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::Invalid("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::Invalid("embedding has a non-finite component".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// "Text in, vector out" embedding provider.
pub trait Embedder: Send + Sync {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError>;
}

/// Embeds `text`, checking it against the expected index dimension.
pub fn embed(text: &str, client: &dyn Embedder, expected_dim: Option<usize>) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let vector = EmbeddingVector::new(client.embed_raw(text)?)?;
    if let Some(expected) = expected_dim {
        if vector.dim() != expected {
            return Err(EmbedError::DimensionMismatch {
                expected,
                actual: vector.dim(),
            });
        }
    }
    Ok(vector)
}

/// Scripted embeddings keyed by exact text. The fixture file is a JSON
/// object mapping text to an array of numbers.
#[derive(Debug, Clone, Default)]
pub struct ReplayEmbedder {
    vectors: HashMap<String, Vec<f64>>,
}

impl ReplayEmbedder {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Self {
        Self { vectors }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let vectors = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
        Ok(Self { vectors })
    }
}

impl Embedder for ReplayEmbedder {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        self.vectors
            .get(text)
            .cloned()
            .ok_or_else(|| EmbedError::ReplayMiss(text.chars().take(60).collect()))
    }
}

/// Offline embedding by signed feature hashing of lowercase word tokens.
/// Deterministic across platforms and runs.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hashing embedder needs a positive dimension");
        Self { dim }
    }
}

impl Embedder for HashingEmbedder {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty())
            .collect();
        let trimmed = lower.trim();
        if tokens.is_empty() && !trimmed.is_empty() {
            tokens.push(trimmed);
        }
        let mut out = vec![0.0; self.dim];
        for t in tokens {
            let h = Sha256::digest(t.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % self.dim as u64;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            out[bucket as usize] += sign;
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    /// Base URL; requests go to `{endpoint}/embeddings`.
    pub endpoint: String,
    #[serde(default)]
    pub api_key: String,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
}

fn default_timeout() -> u64 {
    60
}

/// OpenAI-compatible `/embeddings` client.
pub struct HttpEmbedder {
    http: reqwest::blocking::Client,
    config: HttpEmbedderConfig,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_seconds))
            .build()
            .map_err(|e| EmbedError::Transport(e.to_string()))?;
        Ok(Self { http, config })
    }
}

impl Embedder for HttpEmbedder {
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        let url = format!("{}/embeddings", self.config.endpoint.trim_end_matches('/'));
        let mut req = self
            .http
            .post(&url)
            .json(&serde_json::json!({ "model": self.config.model, "input": text }));
        if !self.config.api_key.is_empty() {
            req = req.bearer_auth(&self.config.api_key);
        }
        let resp = req.send().map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().map_err(|e| EmbedError::Transport(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(EmbedError::Transport(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(EmbedError::Provider(format!("HTTP {status}: {body}")));
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| EmbedError::Provider(format!("unexpected response: {e}")))?;
        parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbedError::Provider("response has no embeddings".into()))
    }
}
