//! Replay scripts and helpers shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use hitforge::agents::{
    run_pipeline, stage, Interaction, NonInteractive, PipelineConfig, PipelineDeps, PipelineState,
};
use hitforge::llm::{LlmClient, ReplayBackend, ReplayEntry};
use hitforge::retrieval::{NoReferences, ReferenceSource};
use hitforge::runner::{MarkerTable, MockRunner, MockStep, Runner};
use hitforge::templates::Templates;

pub const ROD: &str = include_str!("../../fixtures/cards/clean/heat_steady_rod.i");

pub const UNKNOWN_VARIABLE: &str =
    "\n*** ERROR ***\n/home/sim/run/work/rod.i:19.5: no variable 'temp' found for Kernels/conduction\n";
pub const DIVERGED: &str = "Nonlinear solve did not converge due to DIVERGED_LINE_SEARCH iterations 12\n";
pub const SYNTAX: &str = "rod.i:42: syntax error, unexpected end of block\n";

pub fn plan_reply(cards: &[(&str, &str, bool)]) -> String {
    let tasks: Vec<serde_json::Value> = cards
        .iter()
        .map(|(f, t, main)| serde_json::json!({"filename": f, "task": t, "main_app": main}))
        .collect();
    let plan = serde_json::json!({
        "requirement": "Steady heat conduction in a 1 m rod, 300 K at the left end and 350 K at the right end.",
        "cards": tasks,
    });
    format!("Restated requirement and plan:\n\n```plan\n{}\n```\n", serde_json::to_string_pretty(&plan).unwrap())
}

pub fn query_reply(query: &str) -> String {
    format!("```query\n{query}\n```\n")
}

pub fn card_reply(filename: &str, card: &str) -> String {
    format!("Here is the card.\n\n```hit {filename}\n{}\n```\n", card.trim_end())
}

/// The rod card with the right boundary temperature replaced.
pub fn rod_variant(value: u32) -> String {
    ROD.replace("    value = 350\n", &format!("    value = {value}\n"))
}

pub fn align(tokens: (u64, u64)) -> ReplayEntry {
    ReplayEntry::new(stage::ALIGN, &plan_reply(&[("rod.i", "steady conduction in the rod", true)]), tokens.0, tokens.1)
}

pub fn query(tokens: (u64, u64)) -> ReplayEntry {
    ReplayEntry::new(stage::QUERY, &query_reply("steady heat conduction rod dirichlet"), tokens.0, tokens.1)
}

pub fn card(stage_label: &str, content: &str, tokens: (u64, u64)) -> ReplayEntry {
    ReplayEntry::new(stage_label, &card_reply("rod.i", content), tokens.0, tokens.1)
}

/// Align, query and architect entries of a single-card run.
pub fn opening() -> Vec<ReplayEntry> {
    vec![align((420, 90)), query((210, 18)), card(stage::ARCHITECT, ROD, (1650, 610))]
}

pub fn script_total(entries: &[ReplayEntry]) -> u64 {
    entries.iter().map(|e| e.prompt_tokens + e.completion_tokens).sum()
}

pub struct Run {
    pub state: PipelineState,
    pub llm: LlmClient,
    pub backend: Arc<ReplayBackend>,
    pub runner: MockRunner,
    pub dir: tempfile::TempDir,
}

pub fn run_with(
    entries: Vec<ReplayEntry>,
    runner: MockRunner,
    retrieval: &dyn ReferenceSource,
    interaction: &mut dyn Interaction,
    config: &PipelineConfig,
) -> Run {
    let backend = Arc::new(ReplayBackend::new(entries));
    let llm = LlmClient::new(backend.clone());
    let dir = tempfile::tempdir().unwrap();
    let templates = Templates::default();
    let markers = MarkerTable::default();
    let state = run_pipeline(
        "Simulate steady heat conduction in a rod with fixed end temperatures.",
        PipelineDeps {
            llm: &llm,
            retrieval,
            runner: &runner as &dyn Runner,
            interaction,
            templates: &templates,
            markers: &markers,
            config,
        },
        dir.path(),
    );
    Run {
        state,
        llm,
        backend,
        runner,
        dir,
    }
}

pub fn run(entries: Vec<ReplayEntry>, steps: Vec<MockStep>) -> Run {
    run_with(
        entries,
        MockRunner::new(steps),
        &NoReferences,
        &mut NonInteractive,
        &PipelineConfig::default(),
    )
}

pub fn transcript_events(dir: &std::path::Path) -> Vec<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join("transcript.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["events"].as_array().unwrap().clone()
}
