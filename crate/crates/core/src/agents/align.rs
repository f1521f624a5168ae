use serde::Deserialize;

use super::{stage, validate_plan, AgentError, AlignedSpec, CardTask, Confirmation, Interaction, PipelineConfig};
use crate::llm::{ChatRequest, LlmClient, Message, ModelProfile};
use crate::protocol::labeled_block;
use crate::templates::{self, Templates};

#[derive(Deserialize)]
struct PlanJson {
    requirement: String,
    cards: Vec<CardTask>,
}

/// Reads the `plan` block of a model answer into an unconfirmed spec.
pub fn parse_plan(output: &str) -> Result<AlignedSpec, String> {
    let body = labeled_block(output, "plan").ok_or("no fenced `plan` block")?;
    let plan: PlanJson = serde_json::from_str(&body).map_err(|e| format!("plan is not valid JSON: {e}"))?;
    if plan.requirement.trim().is_empty() {
        return Err("the refined requirement is empty".into());
    }
    let mut cards = plan.cards;
    validate_plan(&cards)?;
    if let [only] = cards.as_mut_slice() {
        only.is_main_app = true;
    }
    Ok(AlignedSpec {
        requirement: plan.requirement.trim().to_string(),
        card_plan: cards,
        confirmed: false,
        auto_confirmed: false,
    })
}

/// One proposal, retrying on unparseable output. The accepted answer is left
/// in `messages` as the last assistant turn.
fn propose(
    llm: &LlmClient,
    messages: &mut Vec<Message>,
    config: &PipelineConfig,
) -> Result<AlignedSpec, AgentError> {
    let attempts = config.align_retries + 1;
    let mut reason = String::new();
    for _ in 0..attempts {
        let request = ChatRequest::new(ModelProfile::General, messages.clone()).with_temperature(config.temperature);
        let response = llm.complete(stage::ALIGN, request)?;
        messages.push(Message::assistant(response.content.clone()));
        match parse_plan(&response.content) {
            Ok(spec) => return Ok(spec),
            Err(why) => {
                log::warn!("alignment output rejected: {why}");
                messages.push(Message::user(format!(
                    "Your answer could not be used: {why}. Answer again with a single fenced `plan` block."
                )));
                reason = why;
            }
        }
    }
    Err(AgentError::Alignment { attempts, reason })
}

/// Restates the request and proposes a card plan until the user confirms.
/// Without an interactive user the first valid proposal is confirmed and
/// flagged as auto-confirmed.
pub fn align_requirements(
    request: &str,
    llm: &LlmClient,
    templates: &Templates,
    interaction: &mut dyn Interaction,
    config: &PipelineConfig,
) -> Result<AlignedSpec, AgentError> {
    if request.trim().is_empty() {
        return Err(AgentError::EmptyRequest);
    }
    let mut messages = vec![
        Message::system(templates.render(templates::SYSTEM, &[])),
        Message::user(templates.render(templates::ALIGN, &[("request", request.trim())])),
    ];
    loop {
        let mut spec = propose(llm, &mut messages, config)?;
        if !interaction.is_interactive() {
            spec.confirmed = true;
            spec.auto_confirmed = true;
            return Ok(spec);
        }
        match interaction.review(&spec) {
            Confirmation::Confirm => {
                spec.confirmed = true;
                return Ok(spec);
            }
            Confirmation::Abort => return Err(AgentError::Aborted),
            Confirmation::Edit(feedback) => {
                messages.push(Message::user(
                    templates.render(templates::ALIGN_FEEDBACK, &[("feedback", feedback.trim())]),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{NonInteractive, Scripted};
    use crate::llm::{ReplayBackend, ReplayEntry};
    use std::sync::Arc;

    const ONE: &str = "Plan:\n```plan\n{\"requirement\": \"Steady conduction in a 1 m rod.\", \"cards\": [{\"filename\": \"rod.i\", \"task\": \"steady heat conduction\"}]}\n```\n";
    const TWO: &str = "```plan\n{\"requirement\": \"Thermal then mechanical.\", \"cards\": [{\"filename\": \"thermal.i\", \"task\": \"heat\", \"main_app\": true}, {\"filename\": \"mech.i\", \"task\": \"expansion\", \"main_app\": false}]}\n```";

    fn client(answers: &[&str]) -> LlmClient {
        LlmClient::new(Arc::new(ReplayBackend::new(
            answers.iter().map(|a| ReplayEntry::new(stage::ALIGN, a, 50, 20)).collect(),
        )))
    }

    fn align(llm: &LlmClient, ui: &mut dyn Interaction) -> Result<AlignedSpec, AgentError> {
        align_requirements("Heat a rod", llm, &Templates::default(), ui, &PipelineConfig::default())
    }

    #[test]
    fn scripted_confirm() {
        let llm = client(&[ONE]);
        let mut ui = Scripted::new([Confirmation::Confirm]);
        let spec = align(&llm, &mut ui).unwrap();
        assert!(spec.confirmed && !spec.auto_confirmed);
        assert_eq!(spec.card_plan.len(), 1);
        assert!(spec.card_plan[0].is_main_app);
    }

    #[test]
    fn non_interactive_auto_confirms() {
        let llm = client(&[ONE]);
        let spec = align(&llm, &mut NonInteractive).unwrap();
        assert!(spec.confirmed && spec.auto_confirmed);
    }

    #[test]
    fn multiapp_plan_has_one_main() {
        let llm = client(&[TWO]);
        let spec = align(&llm, &mut NonInteractive).unwrap();
        assert_eq!(spec.card_plan.len(), 2);
        assert_eq!(spec.card_plan.iter().filter(|t| t.is_main_app).count(), 1);
        assert_eq!(spec.main_card().unwrap().filename, "thermal.i");
    }

    #[test]
    fn edit_then_confirm() {
        let llm = client(&[ONE, TWO]);
        let mut ui = Scripted::new([Confirmation::Edit("split into two apps".into()), Confirmation::Confirm]);
        let spec = align(&llm, &mut ui).unwrap();
        assert_eq!(spec.card_plan.len(), 2);
        let last = llm.calls()[1].request.messages.last().unwrap().content.clone();
        assert!(last.contains("split into two apps"));
    }

    #[test]
    fn abort() {
        let llm = client(&[ONE]);
        let mut ui = Scripted::new([Confirmation::Abort]);
        assert!(matches!(align(&llm, &mut ui), Err(AgentError::Aborted)));
    }

    #[test]
    fn unparseable_three_times_fails() {
        let llm = client(&["no plan", "```plan\n{bad\n```", "```plan\n{\"requirement\":\"x\",\"cards\":[]}\n```"]);
        match align(&llm, &mut NonInteractive) {
            Err(AgentError::Alignment { attempts: 3, reason }) => assert!(reason.contains("empty")),
            other => panic!("{other:?}"),
        }
        assert_eq!(llm.call_count(), 3);
    }

    #[test]
    fn retry_then_success() {
        let llm = client(&["sorry", ONE]);
        assert!(align(&llm, &mut NonInteractive).is_ok());
        assert_eq!(llm.call_count(), 2);
    }

    #[test]
    fn empty_request() {
        let llm = client(&[]);
        assert!(matches!(
            align_requirements(" ", &llm, &Templates::default(), &mut NonInteractive, &PipelineConfig::default()),
            Err(AgentError::EmptyRequest)
        ));
    }
}
