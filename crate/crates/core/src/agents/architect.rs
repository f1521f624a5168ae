use std::collections::{BTreeMap, BTreeSet};

use super::{gate, render_plan, stage, AgentError, AlignedSpec, CardTask, GeneratedCard, PipelineConfig, PipelineState};
use crate::hit::Ruleset;
use crate::llm::{ChatRequest, LlmClient, Message, ModelProfile};
use crate::protocol::{fenced_blocks, labeled_block};
use crate::retrieval::{Reference, ReferenceSource};
use crate::runner::ErrorSignature;
use crate::templates::{self, Templates};

/// Generated cards plus the references they were written from.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub cards: Vec<GeneratedCard>,
    pub references: Vec<Reference>,
}

/// The first fenced block labeled with `filename`. When the plan has a
/// single card, an unlabeled or plain `hit` block is accepted as well.
pub fn extract_card(output: &str, filename: &str, single: bool) -> Option<String> {
    let blocks = fenced_blocks(output);
    if let Some(b) = blocks.iter().find(|b| b.has_label(filename)) {
        return Some(b.body.clone());
    }
    if single {
        return blocks
            .into_iter()
            .find(|b| b.info.is_empty() || (b.info.len() == 1 && b.info[0] == "hit"))
            .map(|b| b.body);
    }
    None
}

pub(crate) fn render_references(refs: &[Reference]) -> String {
    if refs.is_empty() {
        return "(none found)\n".into();
    }
    refs.iter()
        .map(|r| format!("### {}\n{}\n```hit\n{}\n```\n", r.name, r.summary.trim(), r.content.trim_end()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn retrieval_query(
    task: &CardTask,
    spec: &AlignedSpec,
    llm: &LlmClient,
    templates: &Templates,
    config: &PipelineConfig,
) -> Result<String, AgentError> {
    let messages = vec![
        Message::system(templates.render(templates::SYSTEM, &[])),
        Message::user(templates.render(
            templates::QUERY,
            &[
                ("filename", &task.filename),
                ("task", &task.task_description),
                ("requirement", &spec.requirement),
            ],
        )),
    ];
    let request = ChatRequest::new(ModelProfile::General, messages).with_temperature(config.temperature);
    let content = llm.complete(stage::QUERY, request)?.content;
    let query = labeled_block(&content, "query").unwrap_or(content);
    let query = query.trim();
    Ok(if query.is_empty() {
        task.task_description.clone()
    } else {
        query.to_string()
    })
}

#[allow(clippy::too_many_arguments)]
fn generate(
    task: &CardTask,
    spec: &AlignedSpec,
    refs: &[Reference],
    feedback: &str,
    stage_label: &str,
    llm: &LlmClient,
    templates: &Templates,
    rules: &Ruleset,
    config: &PipelineConfig,
) -> Result<String, AgentError> {
    let plan = render_plan(&spec.card_plan);
    let references = render_references(refs);
    let mut messages = vec![
        Message::system(templates.render(templates::SYSTEM, &[])),
        Message::user(templates.render(
            templates::ARCHITECT,
            &[
                ("requirement", &spec.requirement),
                ("plan", &plan),
                ("filename", &task.filename),
                ("task", &task.task_description),
                ("references", &references),
                ("feedback", feedback),
            ],
        )),
    ];
    let attempts = config.gate_retries + 1;
    let single = spec.card_plan.len() == 1;
    let mut reason = String::new();
    for _ in 0..attempts {
        let request = ChatRequest::new(ModelProfile::Reasoning, messages.clone()).with_temperature(config.temperature);
        let response = llm.complete(stage_label, request)?;
        let problem = match extract_card(&response.content, &task.filename, single) {
            None => format!("no fenced block labeled `hit {}`", task.filename),
            Some(card) => match gate(&card, rules) {
                Ok(_) => return Ok(card),
                Err(diags) => format!("the card failed the syntax check:\n{diags}"),
            },
        };
        log::warn!("{}: generated card rejected: {problem}", task.filename);
        messages.push(Message::assistant(response.content));
        messages.push(Message::user(format!(
            "{problem}\nReturn the full corrected card in one fenced block whose info string is `hit {}`.",
            task.filename
        )));
        reason = problem;
    }
    Err(AgentError::Architecture {
        filename: task.filename.clone(),
        attempts,
        reason,
    })
}

#[allow(clippy::too_many_arguments)]
fn build(
    spec: &AlignedSpec,
    retrieval: &dyn ReferenceSource,
    llm: &LlmClient,
    templates: &Templates,
    config: &PipelineConfig,
    feedback: &str,
    stage_label: &str,
    revisions: &BTreeMap<String, u32>,
) -> Result<Architecture, AgentError> {
    if !spec.confirmed {
        return Err(AgentError::Config("the specification has not been confirmed".into()));
    }
    let rules = config.ruleset()?;
    let mut cards = Vec::new();
    let mut references: Vec<Reference> = Vec::new();
    let mut seen = BTreeSet::new();
    for task in &spec.card_plan {
        let query = retrieval_query(task, spec, llm, templates, config)?;
        let refs = retrieval.references(&query, config.top_k)?;
        let content = generate(task, spec, &refs, feedback, stage_label, llm, templates, &rules, config)?;
        for r in refs {
            if seen.insert(r.record_id.clone()) {
                references.push(r);
            }
        }
        cards.push(GeneratedCard {
            task: task.clone(),
            content,
            revision: revisions.get(&task.filename).copied().unwrap_or(0),
        });
    }
    Ok(Architecture { cards, references })
}

/// For each planned card: ask for a retrieval query, fetch the top-k
/// reference cards, generate the card and pass it through the parse and
/// lint gate (regenerating on failure).
pub fn architect(
    spec: &AlignedSpec,
    retrieval: &dyn ReferenceSource,
    llm: &LlmClient,
    templates: &Templates,
    config: &PipelineConfig,
) -> Result<Architecture, AgentError> {
    build(spec, retrieval, llm, templates, config, "", stage::ARCHITECT, &BTreeMap::new())
}

/// Rebuilds every card of the plan, telling the architect which error keeps
/// recurring and to take a different approach.
pub fn escalate_to_architect(
    state: &PipelineState,
    signature: &ErrorSignature,
    retrieval: &dyn ReferenceSource,
    llm: &LlmClient,
    templates: &Templates,
    config: &PipelineConfig,
) -> Result<Architecture, AgentError> {
    let spec = state
        .spec
        .as_ref()
        .ok_or_else(|| AgentError::Config("escalation before alignment".into()))?;
    let feedback = templates.render(
        templates::ESCALATE,
        &[("category", signature.category.as_str()), ("key_line", &signature.key_line)],
    );
    let revisions = state
        .cards
        .iter()
        .map(|c| (c.task.filename.clone(), c.revision + 1))
        .collect();
    build(spec, retrieval, llm, templates, config, &feedback, stage::ESCALATE, &revisions)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_rules() {
        let text = "```hit a.i\n[A]\n[]\n```\n```hit\n[B]\n[]\n```\n";
        assert_eq!(extract_card(text, "a.i", false).unwrap(), "[A]\n[]\n");
        assert_eq!(extract_card(text, "b.i", true).unwrap(), "[B]\n[]\n");
        assert!(extract_card(text, "b.i", false).is_none());
        assert!(extract_card("```json\n{}\n```", "x.i", true).is_none());
    }
}
