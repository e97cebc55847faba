use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, LogView};
use crate::evolution::EpochRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishCount {
    pub group: String,
    pub run: String,
    pub round: u64,
    pub punish_count: usize,
}

/// Punish commands per round, grouped by condition label. Sorted by
/// (group, run, round).
pub fn punish_counts(logs: &[LogView]) -> Vec<PunishCount> {
    let mut rows: Vec<PunishCount> = logs
        .iter()
        .flat_map(|log| {
            log.rounds.iter().map(|r| PunishCount {
                group: log.group_label().to_string(),
                run: log.name.clone(),
                round: r.round,
                punish_count: r.punish_count(),
            })
        })
        .collect();
    rows.sort_by(|a, b| (&a.group, &a.run, a.round).cmp(&(&b.group, &b.run, b.round)));
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitCell {
    pub vengefulness: u8,
    pub boldness: u8,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitPoint {
    pub epoch: u32,
    pub mean_vengefulness: f64,
    pub mean_boldness: f64,
    pub var_vengefulness: f64,
    pub var_boldness: f64,
    /// Population multiset over (V, B), sorted by cell.
    pub cells: Vec<TraitCell>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Per-epoch trait statistics of the population that played the epoch.
/// Variances divide by the population size.
pub fn trait_trajectory(epochs: &[EpochRecord]) -> Result<Vec<TraitPoint>, AnalysisError> {
    epochs
        .iter()
        .map(|e| {
            let traits = e
                .population
                .iter()
                .map(|p| p.persona.trait_values().ok_or(AnalysisError::WrongRegime))
                .collect::<Result<Vec<_>, _>>()?;
            let vs: Vec<f64> = traits.iter().map(|(v, _)| v.value() as f64).collect();
            let bs: Vec<f64> = traits.iter().map(|(_, b)| b.value() as f64).collect();
            let (mean_vengefulness, var_vengefulness) = mean_var(&vs);
            let (mean_boldness, var_boldness) = mean_var(&bs);
            let mut cells: BTreeMap<(u8, u8), usize> = BTreeMap::new();
            for (v, b) in &traits {
                *cells.entry((v.value(), b.value())).or_default() += 1;
            }
            Ok(TraitPoint {
                epoch: e.epoch,
                mean_vengefulness,
                mean_boldness,
                var_vengefulness,
                var_boldness,
                cells: cells
                    .into_iter()
                    .map(|((vengefulness, boldness), count)| TraitCell { vengefulness, boldness, count })
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStats {
    pub dim: usize,
    pub centroid: Vec<f64>,
    /// Mean squared Euclidean distance to the centroid.
    pub variance: f64,
}

pub fn embedding_stats(vectors: &[Vec<f64>]) -> Result<EmbeddingStats, AnalysisError> {
    let dim = vectors.first().ok_or(AnalysisError::NoEmbeddings)?.len();
    if let Some(v) = vectors.iter().find(|v| v.len() != dim) {
        return Err(AnalysisError::Dimension(dim, v.len()));
    }
    let n = vectors.len() as f64;
    if vectors.iter().all(|v| v == &vectors[0]) {
        return Ok(EmbeddingStats { dim, centroid: vectors[0].clone(), variance: 0.0 });
    }
    let mut centroid = vec![0.0; dim];
    for v in vectors {
        for (c, x) in centroid.iter_mut().zip(v) {
            *c += x;
        }
    }
    centroid.iter_mut().for_each(|c| *c /= n);
    let variance = vectors
        .iter()
        .map(|v| v.iter().zip(&centroid).map(|(x, c)| (x - c).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n;
    Ok(EmbeddingStats { dim, centroid, variance })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRate {
    pub epoch: u32,
    pub rounds: usize,
    pub cheat_count: usize,
    pub punish_count: usize,
    pub turns: usize,
    /// Cheaters per agent, averaged over the epoch's rounds.
    pub cheat_rate: f64,
    /// Punish commands per discussion turn.
    pub punish_rate: f64,
}

/// Recounts cheating and punishing for every epoch from its round events.
pub fn behavior_rates(log: &LogView) -> Vec<BehaviorRate> {
    log.epochs
        .iter()
        .map(|e| {
            let rounds: Vec<_> = e.rounds.iter().filter_map(|s| log.round(s.round)).collect();
            let cheat_count = rounds.iter().map(|r| r.cheat_count()).sum();
            let punish_count = rounds.iter().map(|r| r.punish_count()).sum();
            let turns = rounds.iter().map(|r| r.turns.len()).sum::<usize>();
            let cheat_rate = if rounds.is_empty() {
                0.0
            } else {
                rounds
                    .iter()
                    .map(|r| {
                        let n = r.test.as_ref().map_or(0, |t| t.entries.len());
                        if n == 0 { 0.0 } else { r.cheat_count() as f64 / n as f64 }
                    })
                    .sum::<f64>()
                    / rounds.len() as f64
            };
            let punish_rate = if turns == 0 { 0.0 } else { punish_count as f64 / turns as f64 };
            BehaviorRate { epoch: e.epoch, rounds: rounds.len(), cheat_count, punish_count, turns, cheat_rate, punish_rate }
        })
        .collect()
}

/// One row of `epoch_metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u32,
    pub mean_vengefulness: Option<f64>,
    pub mean_boldness: Option<f64>,
    pub var_vengefulness: Option<f64>,
    pub var_boldness: Option<f64>,
    pub cheat_count: usize,
    pub punish_count: usize,
    pub cheat_rate: f64,
    pub punish_rate: f64,
    /// Mean over agents of per-round payoff.
    pub mean_payoff: f64,
    pub sd_payoff: f64,
    pub embedding_variance: Option<f64>,
}

pub fn epoch_metrics(log: &LogView) -> Result<Vec<EpochMetrics>, AnalysisError> {
    let rates = behavior_rates(log);
    let embeddings: BTreeMap<u32, f64> = log
        .embeddings
        .iter()
        .map(|e| {
            let vs: Vec<Vec<f64>> = e.vectors.iter().map(|v| v.values.clone()).collect();
            embedding_stats(&vs).map(|s| (e.epoch, s.variance))
        })
        .collect::<Result<_, _>>()?;
    log.epochs
        .iter()
        .zip(rates)
        .map(|(e, rate)| {
            let traits = trait_trajectory(std::slice::from_ref(e)).ok().map(|mut t| t.remove(0));
            let rounds = e.rounds.len().max(1) as f64;
            let per_round: Vec<f64> = e.payoffs.iter().map(|p| p.payoff / rounds).collect();
            let (mean_payoff, var_payoff) = if per_round.is_empty() { (0.0, 0.0) } else { mean_var(&per_round) };
            Ok(EpochMetrics {
                epoch: e.epoch,
                mean_vengefulness: traits.as_ref().map(|t| t.mean_vengefulness),
                mean_boldness: traits.as_ref().map(|t| t.mean_boldness),
                var_vengefulness: traits.as_ref().map(|t| t.var_vengefulness),
                var_boldness: traits.as_ref().map(|t| t.var_boldness),
                cheat_count: rate.cheat_count,
                punish_count: rate.punish_count,
                cheat_rate: rate.cheat_rate,
                punish_rate: rate.punish_rate,
                mean_payoff,
                sd_payoff: var_payoff.sqrt(),
                embedding_variance: embeddings.get(&e.epoch).copied(),
            })
        })
        .collect()
}
