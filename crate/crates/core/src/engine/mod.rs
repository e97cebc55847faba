//! One round of the Norms Game: test phase, public score announcement,
//! discussion phase, payoff settlement.
//!
//! Randomness for a round comes from `GameConfig::rng_seed`:
//!
//! * the engine stream `derive_seed(seed, [0])` draws test scores, the
//!   first speaker, post-punishment speakers and fallback targets;
//! * seat `i` gets its own decision stream `derive_seed(seed, [1, i])`
//!   which is handed to that seat's backend.
//!
//! Keeping backends off the engine stream means a replayed backend that
//! consumes no randomness still reproduces every engine draw.

mod ledger;
mod round;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{settle_payoffs, LedgerEntry, RoundLedger};
pub use round::{
    build_context, draw_test_score, play_round, run_discussion_phase, run_test_phase,
    RoundOutcome, Table,
};

use crate::agents::{AgentId, BackendError};
use crate::protocol::{Command, RosterError};

pub(crate) const ENGINE_STREAM: u64 = 0;
pub(crate) const SEAT_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GameConfig {
    pub n_agents: usize,
    pub max_discussion_turns: usize,
    pub base_mean: f64,
    /// Variance of the test score; read as a standard deviation when
    /// `variance_is_stddev` is set.
    pub base_variance: f64,
    pub cheat_bonus: i64,
    pub punish_damage: i64,
    pub punish_cost: i64,
    pub variance_is_stddev: bool,
    pub rng_seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            n_agents: 7,
            max_discussion_turns: 21,
            base_mean: 50.0,
            base_variance: 10.0,
            cheat_bonus: 30,
            punish_damage: 90,
            punish_cost: 20,
            variance_is_stddev: false,
            rng_seed: 0,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::Config(m.to_string()));
        if self.n_agents < 2 {
            return bad("n_agents must be at least 2");
        }
        if !self.base_mean.is_finite() {
            return bad("base_mean must be finite");
        }
        if !(self.base_variance >= 0.0 && self.base_variance.is_finite()) {
            return bad("base_variance must be finite and >= 0");
        }
        if self.cheat_bonus < 0 || self.punish_damage < 0 || self.punish_cost < 0 {
            return bad("payoff magnitudes must be >= 0");
        }
        Ok(())
    }

    pub fn std_dev(&self) -> f64 {
        if self.variance_is_stddev {
            self.base_variance
        } else {
            self.base_variance.sqrt()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { rng_seed: seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestChoice {
    Test,
    Cheat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEntry {
    pub agent: AgentId,
    pub name: String,
    pub choice: TestChoice,
    pub base_draw: f64,
    pub announced_score: f64,
    pub cheated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPhaseRecord {
    pub entries: Vec<TestEntry>,
}

impl TestPhaseRecord {
    pub fn entry(&self, agent: AgentId) -> Option<&TestEntry> {
        self.entries.iter().find(|e| e.agent == agent)
    }

    pub fn cheat_count(&self) -> usize {
        self.entries.iter().filter(|e| e.cheated).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishApplied {
    pub target: AgentId,
    pub damage: i64,
    pub cost: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscussionEvent {
    pub turn_index: usize,
    pub speaker: AgentId,
    pub utterance: String,
    pub command: Command,
    pub punish_applied: Option<PunishApplied>,
    /// Who speaks next; `None` after a punishment on the final turn.
    pub next_speaker: Option<AgentId>,
    /// Re-prompts used before the command was accepted.
    pub reprompts: usize,
    pub fallback: bool,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid game config: {0}")]
    Config(String),
    #[error(transparent)]
    Roster(#[from] RosterError),
    #[error("run log: {0}")]
    Io(#[from] std::io::Error),
    #[error("backend for {agent}: {source}")]
    Backend { agent: AgentId, source: BackendError },
}
