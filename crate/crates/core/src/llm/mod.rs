//! Provider-agnostic chat completion access with token accounting.
//!
//! Pipeline code talks to an [`LlmClient`], which wraps a [`ChatBackend`],
//! records every call in a [`UsageLedger`] and a call log, and retries
//! transient transport failures with exponential backoff.

mod http;
mod ledger;
mod replay;

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig};
pub use ledger::{LedgerEntry, UsageLedger};
pub use replay::{ReplayBackend, ReplayEntry};

/// Sampling temperature used for every model unless configured otherwise.
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Abstract model class. Configuration maps each profile to a concrete
/// provider model name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelProfile {
    /// Used for whole-card architecture.
    Reasoning,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub profile: ModelProfile,
}

impl ChatRequest {
    pub fn new(profile: ModelProfile, messages: Vec<Message>) -> Self {
        Self {
            messages,
            temperature: DEFAULT_TEMPERATURE,
            profile,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("request has no messages".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!("invalid temperature {}", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("replay script exhausted for stage `{stage}` (call #{seq})")]
    ReplayExhausted { stage: String, seq: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }
}

/// A chat completion provider. `stage` labels the pipeline step issuing the
/// call; live backends ignore it, the replay backend keys on it.
pub trait ChatBackend: Send + Sync {
    fn send(&self, stage: &str, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// One completed call, as kept in the client's call log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub stage: String,
    /// Per-stage sequence number, starting at 0.
    pub seq: usize,
    pub request: ChatRequest,
    pub response: ChatResponse,
}

#[derive(Default)]
struct ClientState {
    ledger: UsageLedger,
    calls: Vec<CallRecord>,
}

pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    state: Mutex<ClientState>,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self::with_retry(backend, RetryPolicy::default())
    }

    pub fn with_retry(backend: Arc<dyn ChatBackend>, retry: RetryPolicy) -> Self {
        Self {
            backend,
            retry,
            state: Mutex::new(ClientState::default()),
        }
    }

    /// Sends a request and records the response under `stage`.
    pub fn complete(&self, stage: &str, request: ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.backend.send(stage, &request) {
                Ok(r) => break r,
                Err(e) if e.is_retriable() && attempt < self.retry.max_attempts => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt - 1);
                    log::warn!("{stage}: {e}; retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(e) => return Err(e),
            }
        };
        let mut state = self.state.lock().expect("llm client state poisoned");
        state.ledger.record(stage, response.prompt_tokens, response.completion_tokens);
        let seq = state.calls.iter().filter(|c| c.stage == stage).count();
        state.calls.push(CallRecord {
            stage: stage.to_string(),
            seq,
            request,
            response: response.clone(),
        });
        Ok(response)
    }

    pub fn ledger(&self) -> UsageLedger {
        self.state.lock().expect("llm client state poisoned").ledger.clone()
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.state.lock().expect("llm client state poisoned").calls.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("llm client state poisoned").calls.len()
    }

    /// Calls made since the first `from` calls.
    pub fn calls_since(&self, from: usize) -> Vec<CallRecord> {
        let state = self.state.lock().expect("llm client state poisoned");
        state.calls.get(from..).map(<[_]>::to_vec).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn request() -> ChatRequest {
        ChatRequest::new(ModelProfile::General, vec![Message::user("hi")])
    }

    #[test]
    fn default_temperature() {
        assert_eq!(request().temperature, 0.01);
    }

    #[test]
    fn replay_single_response() {
        let backend = ReplayBackend::new(vec![ReplayEntry::new("align", "CONFIRMED", 10, 2)]);
        let client = LlmClient::new(Arc::new(backend));
        let r = client.complete("align", request()).unwrap();
        assert_eq!(r.content, "CONFIRMED");
        assert_eq!(client.ledger().total(), 12);
    }

    #[test]
    fn replay_exhaustion() {
        let backend = ReplayBackend::new(vec![ReplayEntry::new("align", "CONFIRMED", 1, 1)]);
        let client = LlmClient::new(Arc::new(backend));
        client.complete("align", request()).unwrap();
        let err = client.complete("align", request()).unwrap_err();
        assert_eq!(
            err,
            LlmError::ReplayExhausted {
                stage: "align".into(),
                seq: 1
            }
        );
        assert_eq!(client.call_count(), 1);
    }

    #[test]
    fn ledger_total_of_two_calls() {
        let backend = ReplayBackend::new(vec![
            ReplayEntry::new("a", "x", 100, 50),
            ReplayEntry::new("b", "y", 20, 5),
        ]);
        let client = LlmClient::new(Arc::new(backend));
        client.complete("a", request()).unwrap();
        client.complete("b", request()).unwrap();
        assert_eq!(client.ledger().total(), 175);
    }

    #[test]
    fn empty_request_rejected() {
        let client = LlmClient::new(Arc::new(ReplayBackend::new(vec![])));
        let err = client
            .complete("a", ChatRequest::new(ModelProfile::General, vec![]))
            .unwrap_err();
        assert!(matches!(err, LlmError::InvalidRequest(_)));
    }

    struct Flaky {
        failures: AtomicU32,
        calls: AtomicU32,
    }

    impl ChatBackend for Flaky {
        fn send(&self, _stage: &str, _request: &ChatRequest) -> Result<ChatResponse, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(LlmError::Transport("connection reset".into()));
            }
            Ok(ChatResponse {
                content: "ok".into(),
                prompt_tokens: 1,
                completion_tokens: 1,
            })
        }
    }

    #[test]
    fn transport_errors_are_retried_up_to_three_attempts() {
        let flaky = Arc::new(Flaky {
            failures: AtomicU32::new(2),
            calls: AtomicU32::new(0),
        });
        let client = LlmClient::with_retry(flaky.clone(), RetryPolicy::immediate(3));
        assert_eq!(client.complete("s", request()).unwrap().content, "ok");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);

        let flaky = Arc::new(Flaky {
            failures: AtomicU32::new(3),
            calls: AtomicU32::new(0),
        });
        let client = LlmClient::with_retry(flaky.clone(), RetryPolicy::immediate(3));
        assert!(matches!(client.complete("s", request()), Err(LlmError::Transport(_))));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
        assert_eq!(client.ledger().total(), 0);
    }

    #[test]
    fn per_stage_sequence_numbers() {
        let backend = ReplayBackend::new(vec![
            ReplayEntry::new("a", "1", 0, 0),
            ReplayEntry::new("b", "2", 0, 0),
            ReplayEntry::new("a", "3", 0, 0),
        ]);
        let client = LlmClient::new(Arc::new(backend));
        assert_eq!(client.complete("a", request()).unwrap().content, "1");
        assert_eq!(client.complete("a", request()).unwrap().content, "3");
        assert_eq!(client.complete("b", request()).unwrap().content, "2");
        let seqs: Vec<_> = client.calls().iter().map(|c| (c.stage.clone(), c.seq)).collect();
        assert_eq!(seqs, vec![("a".into(), 0), ("a".into(), 1), ("b".into(), 0)]);
    }
}
