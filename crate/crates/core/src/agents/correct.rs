use std::collections::BTreeMap;

use super::architect::render_references;
use super::{gate, render_cards, stage, AgentError, AlignedSpec, ErrorRecord, GeneratedCard, PipelineConfig};
use crate::hit::{self, Ruleset};
use crate::llm::{ChatRequest, LlmClient, Message, ModelProfile};
use crate::protocol::fenced_blocks;
use crate::retrieval::Reference;
use crate::templates::{self, Templates};

/// True when the last `window` records carry the same signature.
pub fn detect_stall(history: &[ErrorRecord], window: usize) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    tail.iter().all(|r| r.signature == tail[0].signature)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub cards: Vec<GeneratedCard>,
    /// File names whose content changed.
    pub changed: Vec<String>,
}

impl Correction {
    /// The model returned the cards unchanged.
    pub fn is_no_op(&self) -> bool {
        self.changed.is_empty()
    }
}

fn lint_report(cards: &[GeneratedCard], rules: &Ruleset) -> String {
    let mut lines = Vec::new();
    for c in cards {
        match hit::check(&c.content, rules) {
            Ok((_, diags)) => lines.extend(diags.iter().map(|d| format!("{}: {d}", c.task.filename))),
            Err(diags) => lines.extend(diags.iter().map(|d| format!("{}: {d}", c.task.filename))),
        }
    }
    if lines.is_empty() {
        "(no findings)".into()
    } else {
        lines.join("\n")
    }
}

/// Cards returned by the model, keyed by planned file name.
fn returned_cards(output: &str, cards: &[GeneratedCard]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for block in fenced_blocks(output) {
        for c in cards {
            if block.has_label(&c.task.filename) && !out.contains_key(&c.task.filename) {
                out.insert(c.task.filename.clone(), block.body.clone());
            }
        }
    }
    if out.is_empty() && cards.len() == 1 {
        if let Some(b) = fenced_blocks(output)
            .into_iter()
            .find(|b| b.info.is_empty() || (b.info.len() == 1 && b.info[0] == "hit"))
        {
            out.insert(cards[0].task.filename.clone(), b.body);
        }
    }
    out
}

/// Asks for revised cards given the failure, the current cards and the
/// syntax findings. Every returned card must pass the gate; cards whose
/// content changed get their revision bumped.
#[allow(clippy::too_many_arguments)]
pub fn correct(
    spec: &AlignedSpec,
    cards: &[GeneratedCard],
    error: &ErrorRecord,
    references: &[Reference],
    llm: &LlmClient,
    templates: &Templates,
    config: &PipelineConfig,
) -> Result<Correction, AgentError> {
    let rules = config.ruleset()?;
    let diagnostics = lint_report(cards, &rules);
    let cards_text = render_cards(cards);
    let refs_text = render_references(references);
    let mut messages = vec![
        Message::system(templates.render(templates::SYSTEM, &[])),
        Message::user(templates.render(
            templates::CORRECT,
            &[
                ("requirement", &spec.requirement),
                ("category", error.signature.category.as_str()),
                ("key_line", &error.signature.key_line),
                ("excerpt", error.raw_excerpt.trim_end()),
                ("diagnostics", &diagnostics),
                ("cards", &cards_text),
                ("references", &refs_text),
                ("feedback", ""),
            ],
        )),
    ];
    let attempts = config.correct_retries + 1;
    let mut reason = String::new();
    for _ in 0..attempts {
        let request = ChatRequest::new(ModelProfile::General, messages.clone()).with_temperature(config.temperature);
        let response = llm.complete(stage::CORRECT, request)?;
        let returned = returned_cards(&response.content, cards);
        let problem = if returned.is_empty() {
            "no fenced `hit <filename>` block for any planned card".to_string()
        } else {
            let failures: Vec<String> = returned
                .iter()
                .filter_map(|(name, content)| gate(content, &rules).err().map(|d| format!("{name}:\n{d}")))
                .collect();
            if failures.is_empty() {
                let mut changed = Vec::new();
                let revised = cards
                    .iter()
                    .map(|c| match returned.get(&c.task.filename) {
                        Some(new) if new.trim_end() != c.content.trim_end() => {
                            changed.push(c.task.filename.clone());
                            GeneratedCard {
                                task: c.task.clone(),
                                content: new.clone(),
                                revision: c.revision + 1,
                            }
                        }
                        _ => c.clone(),
                    })
                    .collect();
                return Ok(Correction { cards: revised, changed });
            }
            format!("revised cards failed the syntax check:\n{}", failures.join("\n"))
        };
        log::warn!("correction rejected: {problem}");
        messages.push(Message::assistant(response.content));
        messages.push(Message::user(format!(
            "{problem}\nReturn every card you change in full, each in a fenced block whose info string is `hit <filename>`."
        )));
        reason = problem;
    }
    Err(AgentError::Correction { attempts, reason })
}
