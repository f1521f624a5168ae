use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    align_requirements, architect, correct, detect_stall, escalate_to_architect, AgentError, ErrorRecord, Interaction,
    PipelineConfig, PipelineState, PipelineStatus,
};
use crate::llm::{CallRecord, LlmClient, UsageLedger};
use crate::retrieval::{Reference, ReferenceSource};
use crate::runner::{extract_error, write_cards, ErrorSignature, MarkerTable, RunResult, RunStatus, Runner};
use crate::templates::Templates;

pub struct PipelineDeps<'a> {
    pub llm: &'a LlmClient,
    pub retrieval: &'a dyn ReferenceSource,
    pub runner: &'a dyn Runner,
    pub interaction: &'a mut dyn Interaction,
    pub templates: &'a Templates,
    pub markers: &'a MarkerTable,
    pub config: &'a PipelineConfig,
}

/// One entry of the run-log transcript. No timings are recorded, so equal
/// inputs give byte-identical transcripts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TranscriptEvent {
    LlmCall {
        stage: String,
        seq: usize,
        request_sha256: String,
        response_sha256: String,
        prompt_tokens: u64,
        completion_tokens: u64,
    },
    RunAttempt {
        attempt: u32,
        status: RunStatus,
        exit_code: i32,
        signature: Option<ErrorSignature>,
    },
    Correction {
        round: u32,
        changed: Vec<String>,
        no_op: bool,
    },
    CorrectionFailed {
        round: u32,
        reason: String,
    },
    Escalation {
        round: u32,
        signature: ErrorSignature,
    },
    StatusChange {
        status: PipelineStatus,
        cause: Option<String>,
    },
}

fn sha256_hex<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).unwrap_or_default();
    hex::encode(Sha256::digest(bytes))
}

struct Recorder<'a> {
    llm: &'a LlmClient,
    start: usize,
    synced: usize,
    events: Vec<TranscriptEvent>,
}

impl<'a> Recorder<'a> {
    fn new(llm: &'a LlmClient) -> Self {
        let start = llm.call_count();
        Self {
            llm,
            start,
            synced: start,
            events: Vec::new(),
        }
    }

    fn sync(&mut self) {
        for c in self.llm.calls_since(self.synced) {
            self.synced += 1;
            self.events.push(TranscriptEvent::LlmCall {
                stage: c.stage.clone(),
                seq: c.seq,
                request_sha256: sha256_hex(&c.request),
                response_sha256: sha256_hex(&c.response),
                prompt_tokens: c.response.prompt_tokens,
                completion_tokens: c.response.completion_tokens,
            });
        }
    }

    fn push(&mut self, event: TranscriptEvent) {
        self.sync();
        self.events.push(event);
    }

    fn status(&mut self, state: &PipelineState) {
        self.push(TranscriptEvent::StatusChange {
            status: state.status,
            cause: state.cause.clone(),
        });
    }

    fn calls(&self) -> Vec<CallRecord> {
        self.llm.calls_since(self.start)
    }

    fn ledger(&self) -> UsageLedger {
        let mut ledger = UsageLedger::new();
        for c in self.calls() {
            ledger.record(&c.stage, c.response.prompt_tokens, c.response.completion_tokens);
        }
        ledger
    }
}

/// Upper bound on model calls of one execution: alignment with retries for
/// each proposal, one query plus gated generation per card, and at most
/// `max_iterations - 1` repair steps, each a correction or a full re-architecture.
pub fn llm_call_bound(plan_size: usize, config: &PipelineConfig, proposals: usize) -> usize {
    let align = proposals * (config.align_retries + 1);
    let architecture = plan_size * (1 + config.gate_retries + 1);
    let repair = (config.correct_retries + 1).max(architecture);
    align + architecture + (config.max_iterations.saturating_sub(1) as usize) * repair
}

fn raw_excerpt(result: &RunResult) -> String {
    match (result.stdout_excerpt.trim().is_empty(), result.stderr_excerpt.trim().is_empty()) {
        (false, false) => format!("[stdout]\n{}\n[stderr]\n{}", result.stdout_excerpt, result.stderr_excerpt),
        (false, true) => result.stdout_excerpt.clone(),
        _ => result.stderr_excerpt.clone(),
    }
}

fn drive(state: &mut PipelineState, rec: &mut Recorder, deps: &mut PipelineDeps, run_dir: &Path) -> Result<(), AgentError> {
    let config = deps.config;
    config.validate()?;
    rec.status(state);

    let spec = align_requirements(&state.request, deps.llm, deps.templates, &mut *deps.interaction, config)?;
    state.spec = Some(spec.clone());
    state.status = PipelineStatus::Architecting;
    rec.status(state);

    let arch = architect(&spec, deps.retrieval, deps.llm, deps.templates, config)?;
    state.cards = arch.cards;
    let mut references: Vec<Reference> = arch.references;
    state.status = PipelineStatus::Correcting;
    rec.status(state);

    let main = spec
        .main_card()
        .ok_or_else(|| AgentError::Config("plan has no main card".into()))?
        .filename
        .clone();
    let work = run_dir.join("work");
    let mut failed_rounds = 0u32;
    let mut attempt = 0u32;
    loop {
        write_cards(&work, state.cards.iter().map(|c| (c.task.filename.as_str(), c.content.as_str())))?;
        let result = deps.runner.execute(&work, &main)?;
        let signature = extract_error(&result, deps.markers);
        state.iteration = attempt;
        rec.push(TranscriptEvent::RunAttempt {
            attempt,
            status: result.status,
            exit_code: result.exit_code,
            signature: signature.clone(),
        });
        let Some(signature) = signature else {
            state.status = PipelineStatus::Success;
            return Ok(());
        };
        state.error_history.push(ErrorRecord {
            round: attempt,
            signature: signature.clone(),
            raw_excerpt: raw_excerpt(&result),
        });
        failed_rounds += 1;

        loop {
            if failed_rounds >= config.max_iterations {
                state.status = if detect_stall(&state.error_history, config.stall_window) {
                    PipelineStatus::FailedStalledUnrecovered
                } else {
                    PipelineStatus::FailedMaxIterations
                };
                return Ok(());
            }
            if detect_stall(&state.error_history, config.stall_window) {
                let arch = escalate_to_architect(state, &signature, deps.retrieval, deps.llm, deps.templates, config)?;
                state.escalations += 1;
                state.cards = arch.cards;
                references = arch.references;
                rec.push(TranscriptEvent::Escalation {
                    round: attempt,
                    signature: signature.clone(),
                });
                break;
            }
            let last = state.error_history.last().expect("just pushed");
            match correct(&spec, &state.cards, last, &references, deps.llm, deps.templates, config) {
                Ok(c) => {
                    if c.is_no_op() {
                        log::warn!("round {attempt}: correction returned the cards unchanged");
                    }
                    rec.push(TranscriptEvent::Correction {
                        round: attempt,
                        changed: c.changed.clone(),
                        no_op: c.is_no_op(),
                    });
                    state.cards = c.cards;
                    break;
                }
                Err(AgentError::Correction { reason, .. }) => {
                    rec.push(TranscriptEvent::CorrectionFailed { round: attempt, reason });
                    failed_rounds += 1;
                }
                Err(e) => return Err(e),
            }
        }
        attempt += 1;
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct Transcript<'a> {
    events: &'a [TranscriptEvent],
}

#[derive(Serialize)]
struct LedgerFile<'a> {
    entries: &'a [crate::llm::LedgerEntry],
    total: u64,
}

fn write_run_log(run_dir: &Path, state: &PipelineState, rec: &Recorder) -> Result<(), String> {
    let cards_dir = run_dir.join("cards");
    std::fs::create_dir_all(&cards_dir).map_err(|e| format!("{}: {e}", cards_dir.display()))?;
    for c in &state.cards {
        let p = cards_dir.join(&c.task.filename);
        std::fs::write(&p, &c.content).map_err(|e| format!("{}: {e}", p.display()))?;
    }
    write_json(&run_dir.join("transcript.json"), &Transcript { events: &rec.events })?;
    let ledger = rec.ledger();
    write_json(
        &run_dir.join("ledger.json"),
        &LedgerFile {
            entries: ledger.entries(),
            total: ledger.total(),
        },
    )?;
    write_json(&run_dir.join("calls.json"), &rec.calls())?;
    write_json(&run_dir.join("state.json"), state)
}

/// Runs align, architect, then run/correct rounds until the cards run, the
/// round cap is reached, or a dependency fails. Never panics on dependency
/// failure: the cause is recorded in the returned state. The run log
/// (`cards/`, `transcript.json`, `ledger.json`, `calls.json`, `state.json`)
/// is written to `run_dir`; the solver works in `run_dir/work`.
pub fn run_pipeline(request: &str, mut deps: PipelineDeps, run_dir: &Path) -> PipelineState {
    let llm = deps.llm;
    let mut rec = Recorder::new(llm);
    let mut state = PipelineState::new(request);
    if let Err(e) = drive(&mut state, &mut rec, &mut deps, run_dir) {
        state.status = match e {
            AgentError::Aborted => PipelineStatus::Aborted,
            _ => PipelineStatus::Failed,
        };
        state.cause = Some(e.to_string());
    }
    rec.status(&state);
    state.token_usage = rec.ledger().total();
    if let Err(e) = write_run_log(run_dir, &state, &rec) {
        log::error!("writing run log: {e}");
        state.status = PipelineStatus::Failed;
        state.cause = Some(AgentError::RunLog(e).to_string());
    }
    state
}
