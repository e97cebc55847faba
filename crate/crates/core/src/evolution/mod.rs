//! Generational selection over a fixed population of seven.
//!
//! After each epoch agents are ranked by summed payoff. The top two leave
//! two offspring each, the middle three one each, the bottom two none.
//! Variation then depends on the regime:
//!
//! * traits: one offspring has one trait redrawn uniformly from 1..=7;
//! * personas: both copies of each top-two persona are rephrased by the
//!   language model, the middle three are inherited verbatim.

mod driver;
mod mutation;
mod persona;
mod selection;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use driver::{run_epoch, BackendFactory, EpochSettings, Regime, RoundSummary};
pub use mutation::{mutate_trait, MutationRecord, TraitField};
pub use persona::{
    parse_persona_list, rephrase_persona, PersonaPool, PoolEntry, Provenance, RephraseOutcome,
    REPHRASE_WORDS,
};
pub use selection::{rank_and_select, reproduce, Lineage, Selection};

use crate::agents::{AgentId, AgentProfile};
use crate::engine::EngineError;
use crate::gateway::GatewayError;

pub const POPULATION_SIZE: usize = 7;
pub const DOUBLED: usize = 2;
pub const KEPT: usize = 3;
pub const ELIMINATED: usize = 2;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("population must have exactly {POPULATION_SIZE} agents, got {0}")]
    PopulationSize(usize),
    #[error("payoff for {0} is not finite")]
    NonFinitePayoff(AgentId),
    #[error("trait mutation needs trait personas; {0} has a text persona")]
    WrongRegime(AgentId),
    #[error("persona regime needs a gateway")]
    MissingGateway,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("run log: {0}")]
    Io(#[from] std::io::Error),
}

/// The agents alive in one generation plus the id allocator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub members: Vec<AgentProfile>,
    pub next_id: u64,
}

impl Population {
    pub fn new(members: Vec<AgentProfile>) -> Self {
        let next_id = members.iter().map(|m| m.id.0 + 1).max().unwrap_or(0);
        Self { members, next_id }
    }

    pub fn check_size(&self) -> Result<(), EvolutionError> {
        if self.members.len() == POPULATION_SIZE {
            Ok(())
        } else {
            Err(EvolutionError::PopulationSize(self.members.len()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub agent: AgentId,
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RephraseRecord {
    pub child: AgentId,
    pub parent: AgentId,
    pub old: String,
    pub new: String,
    pub attempts: usize,
    pub fallback: Option<String>,
}

/// Everything that happened in one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub population: Vec<AgentProfile>,
    pub payoffs: Vec<Payoff>,
    pub rounds: Vec<RoundSummary>,
    pub selection: Selection,
    pub lineage: Vec<Lineage>,
    pub mutation: Option<MutationRecord>,
    pub rephrases: Vec<RephraseRecord>,
    pub offspring: Vec<AgentProfile>,
}

impl EpochRecord {
    pub fn payoff(&self, agent: AgentId) -> Option<f64> {
        self.payoffs.iter().find(|p| p.agent == agent).map(|p| p.payoff)
    }
}
