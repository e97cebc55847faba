//! Statistics over run logs.
//!
//! Everything here is a pure function of log bytes: the same log always
//! yields byte-identical CSV, JSON and DOT output.

mod export;
mod network;
mod stats;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use export::{format_sig9, write_exports, ExportSummary};
pub use network::{build_network, NetworkEdge, NetworkNode, PunishmentNetwork};
pub use stats::{
    behavior_rates, embedding_stats, epoch_metrics, punish_counts, trait_trajectory, BehaviorRate,
    EmbeddingStats, EpochMetrics, PunishCount, TraitPoint,
};

use crate::agents::{AgentId, AgentProfile};
use crate::engine::{DiscussionEvent, RoundLedger, TestPhaseRecord};
use crate::evolution::EpochRecord;
use crate::runlog::{kinds, parse_log, LogReadError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{file}: {source}")]
    Log { file: String, source: LogReadError },
    #[error("{file}: line {line}: bad {kind} payload: {message}")]
    Payload { file: String, line: usize, kind: String, message: String },
    #[error("round {0} not found")]
    RoundNotFound(u64),
    #[error("trait statistics need trait personas")]
    WrongRegime,
    #[error("embedding dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("no embeddings given")]
    NoEmbeddings,
    #[error("no logs found in {0}")]
    NoLogs(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One round as reconstructed from its log records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundView {
    pub round: u64,
    pub agents: Vec<AgentProfile>,
    pub test: Option<TestPhaseRecord>,
    pub turns: Vec<DiscussionEvent>,
    pub settlement: Option<RoundLedger>,
}

impl RoundView {
    pub fn punish_count(&self) -> usize {
        self.turns.iter().filter(|t| t.punish_applied.is_some()).count()
    }

    pub fn cheat_count(&self) -> usize {
        self.test.as_ref().map_or(0, TestPhaseRecord::cheat_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentVector {
    pub agent: AgentId,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEmbeddings {
    pub epoch: u32,
    pub model: String,
    pub vectors: Vec<AgentVector>,
}

/// A whole log, grouped by round and epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LogView {
    pub name: String,
    /// Condition label from the run header, if any.
    pub group: Option<String>,
    pub rounds: Vec<RoundView>,
    pub epochs: Vec<EpochRecord>,
    pub embeddings: Vec<EpochEmbeddings>,
    /// Set when the last line was cut off and only the prefix was read.
    pub truncated_at: Option<usize>,
}

impl LogView {
    pub fn from_bytes(name: &str, bytes: &[u8]) -> Result<Self, AnalysisError> {
        let parsed = parse_log(bytes).map_err(|source| AnalysisError::Log { file: name.to_string(), source })?;
        let mut view = LogView { name: name.to_string(), truncated_at: parsed.truncated_at, ..Default::default() };
        let mut rounds: BTreeMap<u64, RoundView> = BTreeMap::new();
        for (i, record) in parsed.records.into_iter().enumerate() {
            let line = i + 1;
            let bad = |e: serde_json::Error| AnalysisError::Payload {
                file: name.to_string(),
                line,
                kind: record.kind.clone(),
                message: e.to_string(),
            };
            let round = || RoundView { round: record.round, ..Default::default() };
            match record.kind.as_str() {
                kinds::RUN_START => {
                    view.group = record.payload.get("group").and_then(Value::as_str).map(str::to_string);
                }
                kinds::ROUND_START => {
                    let agents = serde_json::from_value(record.payload["agents"].clone()).map_err(bad)?;
                    rounds.entry(record.round).or_insert_with(round).agents = agents;
                }
                kinds::ANNOUNCEMENT => {
                    let test = serde_json::from_value(record.payload.clone()).map_err(bad)?;
                    rounds.entry(record.round).or_insert_with(round).test = Some(test);
                }
                kinds::TURN => {
                    let turn = serde_json::from_value(record.payload.clone()).map_err(bad)?;
                    rounds.entry(record.round).or_insert_with(round).turns.push(turn);
                }
                kinds::SETTLEMENT => {
                    let ledger = serde_json::from_value(record.payload.clone()).map_err(bad)?;
                    rounds.entry(record.round).or_insert_with(round).settlement = Some(ledger);
                }
                kinds::EPOCH_END => {
                    view.epochs.push(serde_json::from_value(record.payload.clone()).map_err(bad)?);
                }
                kinds::EMBEDDINGS => {
                    view.embeddings.push(serde_json::from_value(record.payload.clone()).map_err(bad)?);
                }
                _ => {}
            }
        }
        view.rounds = rounds.into_values().collect();
        Ok(view)
    }

    pub fn from_path(path: &Path) -> Result<Self, AnalysisError> {
        let bytes = std::fs::read(path).map_err(|source| AnalysisError::Io { path: path.to_path_buf(), source })?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let view = Self::from_bytes(&name, &bytes).map_err(|e| match e {
            AnalysisError::Log { source, .. } => AnalysisError::Log { file: path.display().to_string(), source },
            AnalysisError::Payload { line, kind, message, .. } => {
                AnalysisError::Payload { file: path.display().to_string(), line, kind, message }
            }
            other => other,
        })?;
        if let Some(line) = view.truncated_at {
            tracing::warn!(file = %path.display(), line, "log truncated; analysing the valid prefix");
        }
        Ok(view)
    }

    pub fn round(&self, round: u64) -> Option<&RoundView> {
        self.rounds.iter().find(|r| r.round == round)
    }

    /// Label used to group this log's rounds in punish-count output.
    pub fn group_label(&self) -> &str {
        self.group.as_deref().unwrap_or(&self.name)
    }
}

/// Run logs under `dir`, recursively, in sorted path order.
pub fn find_logs(dir: &Path) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|source| AnalysisError::Io { path: d.clone(), source })?;
        for entry in entries {
            let path = entry.map_err(|source| AnalysisError::Io { path: d.clone(), source })?.path();
            if path.is_dir() {
                if path.file_name().is_some_and(|n| n != "analysis" && n != "fixtures") {
                    stack.push(path);
                }
            } else if path.extension().is_some_and(|e| e == "jsonl")
                && path.file_name().is_some_and(|n| !n.to_string_lossy().starts_with("calls"))
            {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
