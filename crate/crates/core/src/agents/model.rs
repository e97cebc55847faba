//! Language-model backed agents.
//!
//! Prompts are assembled from versioned templates under `templates/`.
//! Placeholders are written `{{name}}`; rendering fails loudly on any
//! placeholder left unfilled.

use std::sync::Arc;

use super::{round_one_decimal, AgentContext, Backend, BackendError, Persona, Reprompt};
use crate::gateway::{Gateway, GatewayError, Message};
use crate::protocol::{legal_commands_line, Phase};
use crate::rng::GameRng;

/// Prompt text, versioned by file name.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub rules: &'static str,
    pub system_traits: &'static str,
    pub system_persona: &'static str,
    pub turn_test: &'static str,
    pub turn_discussion: &'static str,
    pub rephrase: &'static str,
    pub persona_pool: &'static str,
    pub persona_seed_pool: &'static str,
}

impl PromptTemplates {
    pub const V1: PromptTemplates = PromptTemplates {
        rules: include_str!("../../templates/rules.v1.txt"),
        system_traits: include_str!("../../templates/system_traits.v1.txt"),
        system_persona: include_str!("../../templates/system_persona.v1.txt"),
        turn_test: include_str!("../../templates/turn_test.v1.txt"),
        turn_discussion: include_str!("../../templates/turn_discussion.v1.txt"),
        rephrase: include_str!("../../templates/rephrase.v1.txt"),
        persona_pool: include_str!("../../templates/persona_pool.v1.txt"),
        persona_seed_pool: include_str!("../../templates/persona_seed_pool.v1.txt"),
    };
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::V1
    }
}

/// Substitutes `{{key}}` placeholders.
///
/// # Panics
/// If a placeholder is left unfilled; templates are compiled in, so this
/// is a programming error.
pub(crate) fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    assert!(!out.contains("{{"), "unfilled placeholder in template:\n{out}");
    out.trim_end().to_string()
}

pub fn render_system_prompt(context: &AgentContext, templates: &PromptTemplates) -> String {
    let count = context.roster.len().to_string();
    let players = context.roster.names().join(", ");
    let rules = templates.rules.trim_end();
    match &context.me.persona {
        Persona::Traits { vengefulness, boldness } => fill(
            templates.system_traits,
            &[
                ("name", &context.me.name),
                ("count", &count),
                ("players", &players),
                ("vengefulness", &vengefulness.value().to_string()),
                ("boldness", &boldness.value().to_string()),
                ("rules", rules),
            ],
        ),
        Persona::Text { description } => fill(
            templates.system_persona,
            &[
                ("name", &context.me.name),
                ("count", &count),
                ("players", &players),
                ("persona", description),
                ("rules", rules),
            ],
        ),
    }
}

fn bullet_list(lines: Vec<String>) -> String {
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

pub fn render_turn_prompt(context: &AgentContext, templates: &PromptTemplates) -> String {
    let commands = legal_commands_line(&context.roster, context.phase, &context.me.name);
    match context.phase {
        Phase::Test => fill(templates.turn_test, &[("commands", &commands)]),
        Phase::Discussion => {
            let announcement = bullet_list(
                context
                    .announcement
                    .iter()
                    .map(|a| {
                        format!(
                            "- {}: {:.1}{}",
                            a.name,
                            round_one_decimal(a.score),
                            if a.cheated { " (cheated)" } else { "" }
                        )
                    })
                    .collect(),
            );
            let transcript = bullet_list(
                context
                    .transcript
                    .iter()
                    .map(|t| format!("[{}] {}: {}", t.turn + 1, t.speaker, t.utterance.trim()))
                    .collect(),
            );
            let punishments = bullet_list(
                context
                    .punishments
                    .iter()
                    .map(|p| format!("- {} punished {}", p.actor, p.target))
                    .collect(),
            );
            fill(
                templates.turn_discussion,
                &[
                    ("announcement", &announcement),
                    ("transcript", &transcript),
                    ("punishments", &punishments),
                    ("commands", &commands),
                ],
            )
        }
    }
}

/// One model call for `context`. On a re-prompt the rejected reply is
/// replayed as the assistant turn followed by the correction.
pub fn model_decision(
    context: &AgentContext,
    reprompt: Option<&Reprompt>,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<String, GatewayError> {
    let mut messages = vec![
        Message::system(render_system_prompt(context, templates)),
        Message::user(render_turn_prompt(context, templates)),
    ];
    if let Some(r) = reprompt {
        messages.push(Message::assistant(r.previous.clone()));
        messages.push(Message::user(format!(
            "{}\n{}",
            r.message,
            legal_commands_line(&context.roster, context.phase, &context.me.name)
        )));
    }
    gateway.complete(&gateway.request(messages))
}

pub struct ModelBackend {
    gateway: Arc<Gateway>,
    templates: PromptTemplates,
}

impl ModelBackend {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self { gateway, templates: PromptTemplates::V1 }
    }
}

impl Backend for ModelBackend {
    fn respond(
        &mut self,
        context: &AgentContext,
        reprompt: Option<&Reprompt>,
        _rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        Ok(model_decision(context, reprompt, &self.gateway, &self.templates)?)
    }
}
