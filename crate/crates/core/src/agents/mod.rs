//! The generation pipeline: requirement alignment, retrieval-backed
//! architecture, and the bounded run/correct loop with escalation back to
//! the architect when the same error keeps coming back.

mod align;
mod architect;
mod correct;
mod interaction;
mod pipeline;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hit::{self, LintConfig, Ruleset, CARD_EXTENSION};
use crate::llm::LlmError;
use crate::retrieval::RetrievalError;
use crate::runner::{ErrorSignature, RunnerError};

pub use align::{align_requirements, parse_plan};
pub use architect::{architect, escalate_to_architect, extract_card, Architecture};
pub use correct::{correct, detect_stall, Correction};
pub use interaction::{Confirmation, Interaction, NonInteractive, Scripted, Terminal};
pub use pipeline::{llm_call_bound, run_pipeline, PipelineDeps, TranscriptEvent};

/// Stage labels attached to model calls.
pub mod stage {
    pub const ALIGN: &str = "align";
    pub const QUERY: &str = "query";
    pub const ARCHITECT: &str = "architect";
    pub const ESCALATE: &str = "escalate";
    pub const CORRECT: &str = "correct";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CardTask {
    pub filename: String,
    #[serde(rename = "task")]
    pub task_description: String,
    #[serde(rename = "main_app", default)]
    pub is_main_app: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedSpec {
    pub requirement: String,
    pub card_plan: Vec<CardTask>,
    pub confirmed: bool,
    /// Confirmed without asking anyone (non-interactive mode).
    pub auto_confirmed: bool,
}

impl AlignedSpec {
    /// The card the solver is started on.
    pub fn main_card(&self) -> Option<&CardTask> {
        match self.card_plan.as_slice() {
            [only] => Some(only),
            plan => plan.iter().find(|t| t.is_main_app),
        }
    }
}

/// Checks a card plan: non-empty, unique plain file names with the card
/// extension, and exactly one main application when there is more than one
/// card.
pub fn validate_plan(plan: &[CardTask]) -> Result<(), String> {
    if plan.is_empty() {
        return Err("the card plan is empty".into());
    }
    let mut seen = BTreeSet::new();
    for t in plan {
        let name = &t.filename;
        if name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(format!("`{name}` must be a plain file name"));
        }
        if !name.ends_with(&format!(".{CARD_EXTENSION}")) || name.len() <= CARD_EXTENSION.len() + 1 {
            return Err(format!("`{name}` must end in .{CARD_EXTENSION}"));
        }
        if !seen.insert(name.as_str()) {
            return Err(format!("`{name}` appears more than once"));
        }
        if t.task_description.trim().is_empty() {
            return Err(format!("`{name}` has no task description"));
        }
    }
    let mains = plan.iter().filter(|t| t.is_main_app).count();
    if plan.len() > 1 && mains != 1 {
        return Err(format!(
            "a plan with {} cards needs exactly one main application, found {mains}",
            plan.len()
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCard {
    pub task: CardTask,
    pub content: String,
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub round: u32,
    pub signature: ErrorSignature,
    pub raw_excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineStatus {
    Aligning,
    Architecting,
    Correcting,
    Success,
    FailedMaxIterations,
    FailedStalledUnrecovered,
    /// The user aborted at confirmation.
    Aborted,
    /// A dependency failed (model, retrieval, runner, file system) or a
    /// stage could not produce valid output; see `cause`.
    Failed,
}

impl PipelineStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, Self::Aligning | Self::Architecting | Self::Correcting)
    }
}

impl fmt::Display for PipelineStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        f.write_str(s.as_ref().and_then(|v| v.as_str()).unwrap_or("?"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineState {
    pub request: String,
    pub spec: Option<AlignedSpec>,
    pub cards: Vec<GeneratedCard>,
    pub error_history: Vec<ErrorRecord>,
    /// Run attempts after the first one.
    pub iteration: u32,
    pub status: PipelineStatus,
    pub cause: Option<String>,
    pub escalations: u32,
    pub token_usage: u64,
}

impl PipelineState {
    pub fn new(request: &str) -> Self {
        Self {
            request: request.to_string(),
            spec: None,
            cards: Vec::new(),
            error_history: Vec::new(),
            iteration: 0,
            status: PipelineStatus::Aligning,
            cause: None,
            escalations: 0,
            token_usage: 0,
        }
    }

    /// Total characters of the current cards.
    pub fn generated_chars(&self) -> usize {
        self.cards.iter().map(|c| c.content.chars().count()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_iterations: u32,
    pub stall_window: usize,
    pub top_k: usize,
    /// Extra attempts when the plan cannot be parsed.
    pub align_retries: usize,
    /// Extra generations when a card fails the syntax gate.
    pub gate_retries: usize,
    /// Extra attempts when a correction fails the gate.
    pub correct_retries: usize,
    pub temperature: f64,
    pub lint: LintConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_iterations: 3,
            stall_window: 2,
            top_k: crate::retrieval::DEFAULT_TOP_K,
            align_retries: 2,
            gate_retries: 2,
            correct_retries: 2,
            temperature: crate::llm::DEFAULT_TEMPERATURE,
            lint: LintConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn ruleset(&self) -> Result<Ruleset, AgentError> {
        Ruleset::from_config(&self.lint).map_err(|e| AgentError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_iterations < 1 {
            return Err(AgentError::Config("max_iterations must be at least 1".into()));
        }
        if self.stall_window < 1 {
            return Err(AgentError::Config("stall_window must be at least 1".into()));
        }
        self.ruleset().map(|_| ())
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("empty request")]
    EmptyRequest,
    #[error("aborted by the user")]
    Aborted,
    #[error("alignment failed after {attempts} attempts: {reason}")]
    Alignment { attempts: usize, reason: String },
    #[error("architecture of `{filename}` failed after {attempts} attempts: {reason}")]
    Architecture {
        filename: String,
        attempts: usize,
        reason: String,
    },
    #[error("correction failed after {attempts} attempts: {reason}")]
    Correction { attempts: usize, reason: String },
    #[error("configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Llm(#[from] LlmError),
    #[error("retrieval: {0}")]
    Retrieval(#[from] RetrievalError),
    #[error("runner: {0}")]
    Runner(#[from] RunnerError),
    #[error("run log: {0}")]
    RunLog(String),
}

/// Parse and lint gate: the diagnostics that block a card, rendered one per
/// line, or `Ok` with any non-blocking diagnostics.
pub(crate) fn gate(content: &str, rules: &Ruleset) -> Result<Vec<String>, String> {
    match hit::check(content, rules) {
        Ok((_, warnings)) => Ok(warnings.iter().map(ToString::to_string).collect()),
        Err(diags) => Err(diags.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n")),
    }
}

/// Cards as fenced `hit <filename>` blocks.
pub(crate) fn render_cards(cards: &[GeneratedCard]) -> String {
    cards
        .iter()
        .map(|c| format!("```hit {}\n{}\n```\n", c.task.filename, c.content.trim_end()))
        .collect::<Vec<_>>()
        .join("\n")
}

pub(crate) fn render_plan(plan: &[CardTask]) -> String {
    plan.iter()
        .map(|t| {
            let main = if plan.len() > 1 && t.is_main_app { " (main application)" } else { "" };
            format!("- {}{}: {}", t.filename, main, t.task_description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(name: &str, main: bool) -> CardTask {
        CardTask {
            filename: name.into(),
            task_description: "do it".into(),
            is_main_app: main,
        }
    }

    #[test]
    fn plan_validation() {
        assert!(validate_plan(&[task("a.i", false)]).is_ok());
        assert!(validate_plan(&[task("a.i", true), task("b.i", false)]).is_ok());
        assert!(validate_plan(&[]).is_err());
        assert!(validate_plan(&[task("a.txt", false)]).is_err());
        assert!(validate_plan(&[task("../a.i", false)]).is_err());
        assert!(validate_plan(&[task("a.i", true), task("a.i", false)]).is_err());
        assert!(validate_plan(&[task("a.i", true), task("b.i", true)]).is_err());
        assert!(validate_plan(&[task("a.i", false), task("b.i", false)]).is_err());
    }

    #[test]
    fn main_card_selection() {
        let spec = |plan| AlignedSpec {
            requirement: String::new(),
            card_plan: plan,
            confirmed: true,
            auto_confirmed: false,
        };
        assert_eq!(spec(vec![task("a.i", false)]).main_card().unwrap().filename, "a.i");
        assert_eq!(
            spec(vec![task("a.i", false), task("b.i", true)]).main_card().unwrap().filename,
            "b.i"
        );
    }

    #[test]
    fn status_names() {
        assert_eq!(PipelineStatus::FailedStalledUnrecovered.to_string(), "failed_stalled_unrecovered");
        assert!(PipelineStatus::Aborted.is_terminal());
        assert!(!PipelineStatus::Correcting.is_terminal());
    }
}
