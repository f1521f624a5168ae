use std::collections::BTreeSet;
use std::fmt::Write;

use thiserror::Error;

use super::{extract_apps, AnnotatedCard, AppDoc};
use crate::hit::{self, Diagnostic, HitDocument};
use crate::llm::{ChatRequest, LlmClient, LlmError, Message, ModelProfile};
use crate::protocol::labeled_block;
use crate::templates::{self, Templates};

/// Total model attempts per card before the record is given up on.
pub const DEFAULT_ANNOTATION_ATTEMPTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CardSource {
    pub record_id: String,
    pub name: String,
    pub source_path: String,
    pub content: String,
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("source card does not parse: {0:?}")]
    SourceParse(Vec<Diagnostic>),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("annotation rejected after {attempts} attempts: {reason}")]
    Rejected { attempts: usize, reason: String },
}

/// Stage label used for annotation calls of one record.
pub fn annotation_stage(record_id: &str) -> String {
    format!("annotate:{record_id}")
}

/// A well-formed model answer carrying `summary` and `card`.
pub fn annotation_response(summary: &str, card: &str) -> String {
    format!("```summary\n{}\n```\n\n```hit card\n{}\n```\n", summary.trim(), card.trim_end())
}

fn render_docs(docs: &[AppDoc], card: &HitDocument) -> String {
    if docs.is_empty() {
        return "(no documentation found)\n".to_string();
    }
    let mut out = String::new();
    for d in docs {
        let used: BTreeSet<&str> = card
            .all_blocks()
            .into_iter()
            .filter(|b| b.param("type").map(|v| v.unquoted().trim()) == Some(d.app_name.as_str()))
            .flat_map(|b| b.params.iter().map(|p| p.name.as_str()))
            .collect();
        let _ = writeln!(out, "### {}\n{}", d.app_name, d.description);
        for (p, desc) in &d.param_docs {
            if used.contains(p.as_str()) {
                let _ = writeln!(out, "- `{p}`: {desc}");
            }
        }
        out.push('\n');
    }
    out
}

fn validate(output: &str, original: &HitDocument) -> Result<(String, String, HitDocument), String> {
    let summary = labeled_block(output, "summary")
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    if summary.is_empty() {
        return Err("missing or empty `summary` block".into());
    }
    let content = labeled_block(output, "card").ok_or("missing `card` block")?;
    let doc = hit::parse(&content).map_err(|d| {
        format!(
            "annotated card does not parse: {}",
            d.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        )
    })?;
    if !doc.same_structure(original) {
        return Err("annotated card changes blocks or parameters; only comments may be added".into());
    }
    Ok((summary, content, doc))
}

/// Asks the model for a summary and a commented copy of `source`. The copy
/// is accepted only if it parses and, with comments stripped, is
/// structurally identical to the original.
pub fn annotate_card(
    source: &CardSource,
    docs: &[AppDoc],
    llm: &LlmClient,
    templates: &Templates,
    max_attempts: usize,
) -> Result<AnnotatedCard, AnnotateError> {
    let original = hit::parse(&source.content).map_err(AnnotateError::SourceParse)?;
    let stage = annotation_stage(&source.record_id);
    let docs_text = render_docs(docs, &original);
    let card_text = source.content.trim_end();
    let mut messages = vec![
        Message::system(templates.render(templates::SYSTEM, &[])),
        Message::user(templates.render(
            templates::ANNOTATE,
            &[
                ("source_path", &source.source_path),
                ("card", card_text),
                ("docs", &docs_text),
                ("feedback", ""),
            ],
        )),
    ];
    let mut reason = String::from("no attempts allowed");
    for attempt in 1..=max_attempts {
        let response = llm.complete(&stage, ChatRequest::new(ModelProfile::General, messages.clone()))?;
        match validate(&response.content, &original) {
            Ok((summary, content, doc)) => {
                return Ok(AnnotatedCard {
                    name: source.name.clone(),
                    summary,
                    content,
                    source_path: source.source_path.clone(),
                    apps_used: extract_apps(&doc),
                });
            }
            Err(why) => {
                log::warn!("{}: attempt {attempt} rejected: {why}", source.source_path);
                messages.push(Message::assistant(response.content));
                messages.push(Message::user(format!(
                    "Your answer was rejected: {why}. Answer again with a `summary` block and a `card` block."
                )));
                reason = why;
            }
        }
    }
    Err(AnnotateError::Rejected {
        attempts: max_attempts,
        reason,
    })
}
