use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

/// One scripted response. A replay script file is a JSON array of these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub stage: String,
    pub content: String,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
}

impl ReplayEntry {
    pub fn new(stage: &str, content: &str, prompt_tokens: u64, completion_tokens: u64) -> Self {
        Self {
            stage: stage.to_string(),
            content: content.to_string(),
            prompt_tokens,
            completion_tokens,
        }
    }
}

/// Deterministic backend returning scripted responses.
///
/// A request is matched by (stage label, per-stage sequence number): the
/// n-th call for stage `s` gets the n-th script entry whose stage is `s`.
/// Prompt text never participates in matching.
pub struct ReplayBackend {
    by_stage: HashMap<String, Vec<ReplayEntry>>,
    cursor: Mutex<HashMap<String, usize>>,
    requests: Mutex<Vec<(String, ChatRequest)>>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<ReplayEntry>) -> Self {
        let mut by_stage: HashMap<String, Vec<ReplayEntry>> = HashMap::new();
        for e in entries {
            by_stage.entry(e.stage.clone()).or_default().push(e);
        }
        Self {
            by_stage,
            cursor: Mutex::new(HashMap::new()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
    }

    /// Every request received so far, with its stage label.
    pub fn requests(&self) -> Vec<(String, ChatRequest)> {
        self.requests.lock().expect("replay log poisoned").clone()
    }

    /// Number of scripted entries not yet consumed.
    pub fn remaining(&self) -> usize {
        let cursor = self.cursor.lock().expect("replay cursor poisoned");
        self.by_stage
            .iter()
            .map(|(stage, entries)| entries.len() - cursor.get(stage).copied().unwrap_or(0))
            .sum()
    }
}

impl ChatBackend for ReplayBackend {
    fn send(&self, stage: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.requests
            .lock()
            .expect("replay log poisoned")
            .push((stage.to_string(), request.clone()));
        let mut cursor = self.cursor.lock().expect("replay cursor poisoned");
        let seq = cursor.entry(stage.to_string()).or_insert(0);
        let entry = self
            .by_stage
            .get(stage)
            .and_then(|entries| entries.get(*seq))
            .ok_or_else(|| LlmError::ReplayExhausted {
                stage: stage.to_string(),
                seq: *seq,
            })?;
        *seq += 1;
        Ok(ChatResponse {
            content: entry.content.clone(),
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
        })
    }
}
