use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    mutate_trait, rank_and_select, rephrase_persona, reproduce, EpochRecord, EvolutionError,
    Payoff, Population, RephraseRecord, DOUBLED,
};
use crate::agents::model::PromptTemplates;
use crate::agents::{AgentProfile, Backend, Persona};
use crate::engine::{play_round, GameConfig};
use crate::gateway::Gateway;
use crate::rng::{derive_seed, rng_cursor, rng_from_seed};
use crate::runlog::{kinds, EventSink, LogPhase};

const ROUND_STREAM: u64 = 2;
const EPOCH_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Traits,
    Personas,
}

#[derive(Debug, Clone)]
pub struct EpochSettings {
    pub game: GameConfig,
    pub rounds_per_epoch: usize,
    pub regime: Regime,
    /// Seed of the whole evolutionary run; round and epoch seeds derive from it.
    pub seed: u64,
    pub templates: PromptTemplates,
}

/// Builds a fresh backend for each agent at the start of every round.
pub trait BackendFactory {
    fn backend(&mut self, profile: &AgentProfile) -> Box<dyn Backend>;
}

impl<F: FnMut(&AgentProfile) -> Box<dyn Backend>> BackendFactory for F {
    fn backend(&mut self, profile: &AgentProfile) -> Box<dyn Backend> {
        self(profile)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u64,
    pub cheaters: usize,
    pub punishes: usize,
    pub turns: usize,
}

/// Plays one epoch and returns its record with the next generation.
pub fn run_epoch(
    epoch: u32,
    population: &Population,
    settings: &EpochSettings,
    factory: &mut dyn BackendFactory,
    gateway: Option<&Gateway>,
    sink: &mut dyn EventSink,
) -> Result<(EpochRecord, Population), EvolutionError> {
    population.check_size()?;
    let members = &population.members;
    let mut totals = vec![0.0f64; members.len()];
    let mut rounds = Vec::with_capacity(settings.rounds_per_epoch);
    for r in 0..settings.rounds_per_epoch {
        let global = epoch as u64 * settings.rounds_per_epoch as u64 + r as u64;
        sink.set_round(global);
        let game = settings.game.with_seed(derive_seed(settings.seed, &[ROUND_STREAM, epoch as u64, r as u64]));
        let mut backends: Vec<Box<dyn Backend>> = members.iter().map(|p| factory.backend(p)).collect();
        let outcome = play_round(&game, members, &mut backends, sink)?;
        for (total, member) in totals.iter_mut().zip(members) {
            *total += outcome.ledger.score(member.id).expect("every agent is in the ledger");
        }
        rounds.push(RoundSummary {
            round: global,
            cheaters: outcome.test.cheat_count(),
            punishes: outcome.punish_count(),
            turns: outcome.events.len(),
        });
    }

    let mut rng = rng_from_seed(derive_seed(settings.seed, &[EPOCH_STREAM, epoch as u64]));
    if settings.regime == Regime::Personas {
        let gateway = gateway.ok_or(EvolutionError::MissingGateway)?;
        let mut vectors = Vec::with_capacity(members.len());
        for m in members {
            let text = m.persona.description().unwrap_or_default();
            let e = gateway.embed(text)?;
            vectors.push(json!({"agent": m.id, "values": e.values}));
        }
        sink.emit(
            LogPhase::Epoch,
            kinds::EMBEDDINGS,
            json!({"epoch": epoch, "model": gateway.config().embedding_model, "vectors": vectors}),
            rng_cursor(&rng),
        )?;
    }

    let payoffs: Vec<_> = members.iter().map(|m| m.id).zip(totals).collect();
    let selection = rank_and_select(&payoffs)?;
    let mut next_id = population.next_id;
    let (mut offspring, lineage) = reproduce(members, &selection, &mut next_id);

    let mut mutation = None;
    let mut rephrases = Vec::new();
    match settings.regime {
        Regime::Traits => {
            let (mutated, record) = mutate_trait(&offspring, &mut rng)?;
            offspring = mutated;
            mutation = Some(record);
        }
        Regime::Personas => {
            let gateway = gateway.ok_or(EvolutionError::MissingGateway)?;
            for (slot, link) in lineage.iter().enumerate().take(2 * DOUBLED) {
                let old = offspring[slot].persona.description().unwrap_or_default().to_string();
                let outcome = rephrase_persona(&old, slot % 2 + 1, gateway, &settings.templates)?;
                if let Ok(p) = Persona::text(outcome.text.clone()) {
                    offspring[slot].persona = p;
                }
                let record = RephraseRecord {
                    child: link.child,
                    parent: link.parent,
                    old,
                    new: outcome.text,
                    attempts: outcome.attempts,
                    fallback: outcome.fallback,
                };
                sink.emit(
                    LogPhase::Epoch,
                    kinds::REPHRASE,
                    serde_json::to_value(&record).expect("serializable"),
                    rng_cursor(&rng),
                )?;
                rephrases.push(record);
            }
        }
    }

    let record = EpochRecord {
        epoch,
        population: members.clone(),
        payoffs: payoffs.into_iter().map(|(agent, payoff)| Payoff { agent, payoff }).collect(),
        rounds,
        selection,
        lineage,
        mutation,
        rephrases,
        offspring: offspring.clone(),
    };
    sink.emit(
        LogPhase::Epoch,
        kinds::EPOCH_END,
        serde_json::to_value(&record).expect("serializable"),
        rng_cursor(&rng),
    )?;
    Ok((record, Population { members: offspring, next_id }))
}
