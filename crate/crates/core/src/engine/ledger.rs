use serde::{Deserialize, Serialize};

use super::{DiscussionEvent, GameConfig, TestPhaseRecord};
use crate::agents::AgentId;

/// Additive payoff account for one agent. The three fixed components are
/// integers; only `base` is real-valued.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub agent: AgentId,
    pub base: f64,
    pub cheat_bonus_total: i64,
    pub punished_total: i64,
    pub punish_cost_total: i64,
    pub score: f64,
}

impl LedgerEntry {
    fn new(agent: AgentId, base: f64) -> Self {
        Self { agent, base, cheat_bonus_total: 0, punished_total: 0, punish_cost_total: 0, score: base }
    }

    /// Sum of the fixed components.
    pub fn adjustment(&self) -> i64 {
        self.cheat_bonus_total + self.punished_total + self.punish_cost_total
    }

    fn refresh(&mut self) {
        self.score = self.base + self.adjustment() as f64;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLedger {
    pub entries: Vec<LedgerEntry>,
}

impl RoundLedger {
    /// Opens a ledger from the test phase, crediting cheat bonuses.
    pub fn open(test: &TestPhaseRecord, config: &GameConfig) -> Self {
        let entries = test
            .entries
            .iter()
            .map(|t| {
                let mut e = LedgerEntry::new(t.agent, t.base_draw);
                if t.cheated {
                    e.cheat_bonus_total = config.cheat_bonus;
                    e.refresh();
                }
                e
            })
            .collect();
        Self { entries }
    }

    fn entry_mut(&mut self, agent: AgentId) -> Option<&mut LedgerEntry> {
        self.entries.iter_mut().find(|e| e.agent == agent)
    }

    pub fn entry(&self, agent: AgentId) -> Option<&LedgerEntry> {
        self.entries.iter().find(|e| e.agent == agent)
    }

    /// Applies one discussion event; non-punish events change nothing.
    pub fn apply(&mut self, event: &DiscussionEvent) {
        let Some(p) = event.punish_applied else { return };
        if let Some(actor) = self.entry_mut(event.speaker) {
            actor.punish_cost_total -= p.cost;
            actor.refresh();
        }
        if let Some(target) = self.entry_mut(p.target) {
            target.punished_total -= p.damage;
            target.refresh();
        }
    }

    pub fn score(&self, agent: AgentId) -> Option<f64> {
        self.entry(agent).map(|e| e.score)
    }
}

/// Final ledger for a round. Pure in its inputs.
pub fn settle_payoffs(
    test: &TestPhaseRecord,
    events: &[DiscussionEvent],
    config: &GameConfig,
) -> RoundLedger {
    events.iter().fold(RoundLedger::open(test, config), |mut ledger, e| {
        ledger.apply(e);
        ledger
    })
}
