use std::ops::RangeInclusive;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::agents::model::PromptTemplates;
use crate::gateway::{Gateway, GatewayError, Message};
use crate::protocol::MAX_REPROMPTS;
use crate::rng::GameRng;

/// Accepted length of a rephrased persona, in whitespace-separated words.
pub const REPHRASE_WORDS: RangeInclusive<usize> = 5..=20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Generated,
    /// Taken from the built-in list when the model returned too few.
    Builtin,
    Inherited,
    Rephrased,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub description: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaPool {
    pub entries: Vec<PoolEntry>,
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Extracts list items from a model reply. Only lines that start with a
/// number followed by `.` or `)`, or with `-` or `*`, count as items.
pub fn parse_persona_list(reply: &str) -> Vec<String> {
    reply
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let rest = if let Some(r) = line.strip_prefix(['-', '*']) {
                r
            } else {
                let digits = line.find(|c: char| !c.is_ascii_digit())?;
                if digits == 0 {
                    return None;
                }
                line[digits..].strip_prefix(['.', ')'])?
            };
            let item = clean_line(rest);
            (!item.is_empty()).then_some(item)
        })
        .collect()
}

fn clean_line(s: &str) -> String {
    s.trim().trim_matches(|c| c == '"' || c == '\'' || c == '*').trim().to_string()
}

impl PersonaPool {
    pub fn builtin(templates: &PromptTemplates) -> Vec<String> {
        templates
            .persona_seed_pool
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect()
    }

    /// Asks the model for `count` personas. Items outside the accepted word
    /// range and duplicates are dropped; any shortfall is filled from the
    /// built-in list.
    pub fn generate(
        gateway: &Gateway,
        templates: &PromptTemplates,
        count: usize,
    ) -> Result<Self, GatewayError> {
        let prompt = crate::agents::model::fill(templates.persona_pool, &[("count", &count.to_string())]);
        let reply = gateway.complete(&gateway.request(vec![Message::system(prompt), Message::user("Write the list now.")]))?;
        let mut entries: Vec<PoolEntry> = Vec::with_capacity(count);
        let mut push = |description: String, provenance| {
            let fresh = !entries.iter().any(|e| e.description.eq_ignore_ascii_case(&description));
            if fresh && entries.len() < count && REPHRASE_WORDS.contains(&word_count(&description)) {
                entries.push(PoolEntry { description, provenance });
            }
        };
        for item in parse_persona_list(&reply) {
            push(item, Provenance::Generated);
        }
        for item in Self::builtin(templates) {
            push(item, Provenance::Builtin);
        }
        Ok(Self { entries })
    }

    /// `k` distinct entries chosen uniformly, in draw order.
    pub fn sample(&self, k: usize, rng: &mut GameRng) -> Vec<PoolEntry> {
        let k = k.min(self.entries.len());
        index::sample(rng, self.entries.len(), k)
            .into_iter()
            .map(|i| self.entries[i].clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RephraseOutcome {
    pub text: String,
    pub attempts: usize,
    /// Set when the persona was kept verbatim.
    pub fallback: Option<String>,
}

/// Rephrases `persona` through the model. `variant` distinguishes the two
/// copies of one parent so they do not share a cached reply. Replies
/// outside the accepted word range are retried; after the retries, or when
/// the service stays down, the persona is kept verbatim. Other gateway
/// errors are returned.
pub fn rephrase_persona(
    persona: &str,
    variant: usize,
    gateway: &Gateway,
    templates: &PromptTemplates,
) -> Result<RephraseOutcome, GatewayError> {
    let base = format!("{}\nThis is variation {variant} of 2.", templates.rephrase.trim_end());
    let mut system = base.clone();
    for attempt in 0..=MAX_REPROMPTS {
        let request = gateway.request(vec![Message::system(system.clone()), Message::user(persona)]);
        let reply = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) if e.is_transient() => {
                return Ok(RephraseOutcome {
                    text: persona.to_string(),
                    attempts: attempt + 1,
                    fallback: Some(format!("gateway: {e}")),
                })
            }
            Err(e) => return Err(e),
        };
        let text = reply.lines().map(clean_line).find(|l| !l.is_empty()).unwrap_or_default();
        let words = word_count(&text);
        if REPHRASE_WORDS.contains(&words) {
            return Ok(RephraseOutcome { text, attempts: attempt + 1, fallback: None });
        }
        system = format!(
            "{base}\nYour previous answer had {words} words. Use between {} and {} words.",
            REPHRASE_WORDS.start(),
            REPHRASE_WORDS.end()
        );
    }
    Ok(RephraseOutcome {
        text: persona.to_string(),
        attempts: MAX_REPROMPTS + 1,
        fallback: Some("word_count".to_string()),
    })
}
