use serde::{Deserialize, Serialize};

use super::{EvolutionError, DOUBLED, ELIMINATED, KEPT, POPULATION_SIZE};
use crate::agents::{seat_name, AgentId, AgentProfile};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Best first.
    pub ranking: Vec<AgentId>,
    pub doubled: Vec<AgentId>,
    pub kept: Vec<AgentId>,
    pub eliminated: Vec<AgentId>,
}

/// Ranks by payoff, highest first, breaking ties by ascending id.
pub fn rank_and_select(payoffs: &[(AgentId, f64)]) -> Result<Selection, EvolutionError> {
    if payoffs.len() != POPULATION_SIZE {
        return Err(EvolutionError::PopulationSize(payoffs.len()));
    }
    if let Some((id, _)) = payoffs.iter().find(|(_, p)| !p.is_finite()) {
        return Err(EvolutionError::NonFinitePayoff(*id));
    }
    let mut sorted = payoffs.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let ranking: Vec<AgentId> = sorted.into_iter().map(|(id, _)| id).collect();
    Ok(Selection {
        doubled: ranking[..DOUBLED].to_vec(),
        kept: ranking[DOUBLED..DOUBLED + KEPT].to_vec(),
        eliminated: ranking[DOUBLED + KEPT..DOUBLED + KEPT + ELIMINATED].to_vec(),
        ranking,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    pub child: AgentId,
    pub parent: AgentId,
}

/// Builds the next generation: two copies of each doubled parent, then one
/// of each kept parent, in rank order. Children get fresh ids from
/// `next_id` and seat names by position.
pub fn reproduce(
    parents: &[AgentProfile],
    selection: &Selection,
    next_id: &mut u64,
) -> (Vec<AgentProfile>, Vec<Lineage>) {
    let parent_ids = selection
        .doubled
        .iter()
        .flat_map(|id| [*id, *id])
        .chain(selection.kept.iter().copied());
    let mut children = Vec::with_capacity(POPULATION_SIZE);
    let mut lineage = Vec::with_capacity(POPULATION_SIZE);
    for (slot, parent_id) in parent_ids.enumerate() {
        let parent = parents
            .iter()
            .find(|p| p.id == parent_id)
            .expect("selection refers to population members");
        let child = AgentProfile {
            id: AgentId(*next_id),
            name: seat_name(slot),
            persona: parent.persona.clone(),
            backend: parent.backend,
        };
        *next_id += 1;
        lineage.push(Lineage { child: child.id, parent: parent_id });
        children.push(child);
    }
    (children, lineage)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u64]) -> Vec<AgentId> {
        v.iter().map(|&i| AgentId(i)).collect()
    }

    #[test]
    fn descending_example() {
        let payoffs: Vec<_> = [70.0, 60.0, 50.0, 40.0, 30.0, 20.0, 10.0]
            .iter()
            .enumerate()
            .map(|(i, &p)| (AgentId(i as u64), p))
            .collect();
        let s = rank_and_select(&payoffs).unwrap();
        assert_eq!(s.doubled, ids(&[0, 1]));
        assert_eq!(s.kept, ids(&[2, 3, 4]));
        assert_eq!(s.eliminated, ids(&[5, 6]));
    }

    #[test]
    fn ties_fall_back_to_id_order() {
        let payoffs: Vec<_> = [6u64, 2, 4, 0, 5, 1, 3].iter().map(|&i| (AgentId(i), 1.0)).collect();
        let s = rank_and_select(&payoffs).unwrap();
        assert_eq!(s.ranking, ids(&[0, 1, 2, 3, 4, 5, 6]));
    }

    #[test]
    fn wrong_size_and_nan_rejected() {
        assert!(matches!(rank_and_select(&[(AgentId(0), 1.0)]), Err(EvolutionError::PopulationSize(1))));
        let mut p: Vec<_> = (0..7).map(|i| (AgentId(i), 0.0)).collect();
        p[3].1 = f64::NAN;
        assert!(matches!(rank_and_select(&p), Err(EvolutionError::NonFinitePayoff(AgentId(3)))));
    }
}
