//! Agent identities, personas, the per-turn context they see, and the
//! pluggable decision backends.

pub mod model;
mod parametric;
mod scripted;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use model::{model_decision, render_system_prompt, render_turn_prompt, ModelBackend, PromptTemplates};
pub use parametric::{
    metanorm_candidates, parametric_discussion_decision, parametric_test_decision,
    ParametricBackend, TraitLevel,
};
pub use scripted::{context_key, RecordingBackend, ReplayBackend, ScriptedBackend};

use crate::gateway::GatewayError;
use crate::protocol::{Command, Phase, Roster};
use crate::rng::GameRng;

/// Soft cap on persona length; longer personas are accepted but logged.
pub const PERSONA_SOFT_WORD_CAP: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// A trait level on the 1..=7 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct TraitScore(u8);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("trait score {0} is outside 1..=7")]
    TraitOutOfRange(i64),
    #[error("persona text is empty")]
    EmptyPersona,
}

impl TraitScore {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 7;

    pub fn new(value: u8) -> Result<Self, AgentError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(AgentError::TraitOutOfRange(value.into()))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// `value / 7`, the per-decision probability used by parametric agents.
    pub fn probability(self) -> f64 {
        f64::from(self.0) / f64::from(Self::MAX)
    }
}

impl<'de> Deserialize<'de> for TraitScore {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        u8::try_from(v)
            .ok()
            .and_then(|v| TraitScore::new(v).ok())
            .ok_or_else(|| serde::de::Error::custom(AgentError::TraitOutOfRange(v)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Persona {
    Traits {
        vengefulness: TraitScore,
        boldness: TraitScore,
    },
    Text {
        description: String,
    },
}

impl Persona {
    pub fn traits(vengefulness: u8, boldness: u8) -> Result<Self, AgentError> {
        Ok(Persona::Traits {
            vengefulness: TraitScore::new(vengefulness)?,
            boldness: TraitScore::new(boldness)?,
        })
    }

    pub fn text(description: impl Into<String>) -> Result<Self, AgentError> {
        let description = description.into().trim().to_string();
        if description.is_empty() {
            return Err(AgentError::EmptyPersona);
        }
        let words = description.split_whitespace().count();
        if words > PERSONA_SOFT_WORD_CAP {
            tracing::warn!(words, "persona exceeds soft word cap");
        }
        Ok(Persona::Text { description })
    }

    pub fn trait_values(&self) -> Option<(TraitScore, TraitScore)> {
        match self {
            Persona::Traits { vengefulness, boldness } => Some((*vengefulness, *boldness)),
            Persona::Text { .. } => None,
        }
    }

    pub fn description(&self) -> Option<&str> {
        match self {
            Persona::Text { description } => Some(description),
            Persona::Traits { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Parametric,
    Scripted,
    Replay,
    Model,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "parametric" => Ok(Self::Parametric),
            "scripted" => Ok(Self::Scripted),
            "replay" => Ok(Self::Replay),
            "model" => Ok(Self::Model),
            other => Err(format!(
                "unknown backend {other:?} (parametric|scripted|replay|model)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    pub name: String,
    pub persona: Persona,
    pub backend: BackendKind,
}

/// Fixed display names, assigned by seat.
pub const SEAT_NAMES: [&str; 10] = [
    "Alice", "Bob", "Carol", "Dave", "Eve", "Frank", "Grace", "Heidi", "Ivan", "Judy",
];

pub fn seat_name(seat: usize) -> String {
    SEAT_NAMES
        .get(seat)
        .map_or_else(|| format!("Agent{}", seat + 1), |s| s.to_string())
}

/// What an agent knows about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfView {
    pub id: AgentId,
    pub name: String,
    pub persona: Persona,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnouncedScore {
    pub name: String,
    /// Rounded to one decimal.
    pub score: f64,
    pub cheated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub turn: usize,
    pub speaker: String,
    pub utterance: String,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishPair {
    pub actor: String,
    pub target: String,
}

/// Everything an agent may see when asked to act. Other agents appear by
/// name only; their personas are never included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentContext {
    pub phase: Phase,
    pub me: SelfView,
    pub roster: Roster,
    pub announcement: Vec<AnnouncedScore>,
    pub transcript: Vec<TranscriptLine>,
    pub punishments: Vec<PunishPair>,
}

impl AgentContext {
    pub fn cheaters(&self) -> impl Iterator<Item = &str> {
        self.announcement
            .iter()
            .filter(|a| a.cheated)
            .map(|a| a.name.as_str())
    }

    pub fn others(&self) -> Vec<&str> {
        self.roster
            .names()
            .iter()
            .map(String::as_str)
            .filter(|n| *n != self.me.name)
            .collect()
    }
}

pub fn round_one_decimal(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// A failed parse being returned to the agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reprompt {
    /// 1-based re-prompt number.
    pub attempt: usize,
    pub previous: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("scripted backend has no utterances left")]
    Exhausted,
    #[error("no recorded utterance for context {0}")]
    FixtureMissing(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("fixture store: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Whether the engine may substitute a fallback command: a scripted
    /// backend running dry, or a service that stayed down through its
    /// retries. Missing fixtures and rejected requests stop the round.
    pub fn is_recoverable(&self) -> bool {
        match self {
            BackendError::Exhausted => true,
            BackendError::Gateway(e) => e.is_transient(),
            BackendError::FixtureMissing(_) | BackendError::Io(_) => false,
        }
    }
}

/// Maps a context to one raw utterance. Parsing and re-prompting are the
/// engine's job.
pub trait Backend: Send {
    fn respond(
        &mut self,
        context: &AgentContext,
        reprompt: Option<&Reprompt>,
        rng: &mut GameRng,
    ) -> Result<String, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn respond(
        &mut self,
        context: &AgentContext,
        reprompt: Option<&Reprompt>,
        rng: &mut GameRng,
    ) -> Result<String, BackendError> {
        (**self).respond(context, reprompt, rng)
    }
}
