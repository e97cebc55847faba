use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnalysisError, LogView};
use crate::agents::AgentId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: AgentId,
    pub name: String,
    pub cheated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub from: AgentId,
    pub to: AgentId,
    pub count: usize,
}

/// Who punished whom in one round. Edges are sorted by (from, to).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PunishmentNetwork {
    pub round: u64,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

pub const CHEATER_COLOR: &str = "red";
pub const HONEST_COLOR: &str = "lightblue";

pub fn build_network(log: &LogView, round: u64) -> Result<PunishmentNetwork, AnalysisError> {
    let view = log.round(round).ok_or(AnalysisError::RoundNotFound(round))?;
    let nodes = match &view.test {
        Some(test) => test
            .entries
            .iter()
            .map(|e| NetworkNode { id: e.agent, name: e.name.clone(), cheated: e.cheated })
            .collect(),
        None => view
            .agents
            .iter()
            .map(|a| NetworkNode { id: a.id, name: a.name.clone(), cheated: false })
            .collect(),
    };
    let mut counts: BTreeMap<(AgentId, AgentId), usize> = BTreeMap::new();
    for turn in &view.turns {
        if let Some(p) = turn.punish_applied {
            *counts.entry((turn.speaker, p.target)).or_default() += 1;
        }
    }
    let edges = counts.into_iter().map(|((from, to), count)| NetworkEdge { from, to, count }).collect();
    Ok(PunishmentNetwork { round, nodes, edges })
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl PunishmentNetwork {
    pub fn total_punishments(&self) -> usize {
        self.edges.iter().map(|e| e.count).sum()
    }

    /// Graphviz rendering. Node ids are agent ids; cheaters are filled red,
    /// everyone else light blue. Each edge carries its multiplicity in
    /// both `label` and `weight`.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        writeln!(out, "digraph punish_round_{} {{", self.round).unwrap();
        for n in &self.nodes {
            let color = if n.cheated { CHEATER_COLOR } else { HONEST_COLOR };
            writeln!(
                out,
                "  {} [label={}, cheated={}, style=filled, fillcolor={}];",
                quote(&n.id.to_string()),
                quote(&n.name),
                n.cheated,
                color
            )
            .unwrap();
        }
        for e in &self.edges {
            writeln!(
                out,
                "  {} -> {} [label=\"{}\", weight={}];",
                quote(&e.from.to_string()),
                quote(&e.to.to_string()),
                e.count,
                e.count
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }
}
