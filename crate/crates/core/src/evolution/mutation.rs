use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EvolutionError;
use crate::agents::{AgentId, AgentProfile, Persona, TraitScore};
use crate::rng::GameRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitField {
    Vengefulness,
    Boldness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub target: AgentId,
    pub field: TraitField,
    pub old: u8,
    pub new: u8,
}

/// Redraws one trait of one agent.
///
/// Draw order: agent index uniform over the population, then the field
/// (vengefulness or boldness, equally likely), then the new value uniform
/// over 1..=7. The new value may equal the old one.
pub fn mutate_trait(
    population: &[AgentProfile],
    rng: &mut GameRng,
) -> Result<(Vec<AgentProfile>, MutationRecord), EvolutionError> {
    if let Some(p) = population.iter().find(|p| p.persona.trait_values().is_none()) {
        return Err(EvolutionError::WrongRegime(p.id));
    }
    if population.is_empty() {
        return Err(EvolutionError::PopulationSize(0));
    }
    let mut out = population.to_vec();
    let index = rng.random_range(0..out.len());
    let field = if rng.random_bool(0.5) { TraitField::Vengefulness } else { TraitField::Boldness };
    let new = TraitScore::new(rng.random_range(TraitScore::MIN..=TraitScore::MAX)).expect("in range");
    let target = &mut out[index];
    let Persona::Traits { vengefulness, boldness } = &mut target.persona else {
        unreachable!("checked above")
    };
    let slot = match field {
        TraitField::Vengefulness => vengefulness,
        TraitField::Boldness => boldness,
    };
    let old = slot.value();
    *slot = new;
    let record = MutationRecord { target: target.id, field, old, new: new.value() };
    Ok((out, record))
}
