//! Experiment configuration, run directories, resume and replay.
//!
//! A run directory looks like this:
//!
//! ```text
//! <out>/config.json            effective RunConfig
//! <out>/run_meta.json          schema and template versions
//! <out>/logs/<unit>.jsonl      one run log per unit
//! <out>/checkpoints/<unit>.json
//! <out>/calls.jsonl            live call metrics (live and record modes)
//! <out>/fixtures/              default fixture store
//! ```
//!
//! Units are the independent pieces of an experiment: one per condition
//! for trait groups, one per trial for the evolution experiments. Unit
//! seeds come from `derive_seed(seed, [experiment_index, unit_index])`.

mod replay;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use replay::{replay_log, transcript, ReplayReport};
pub use run::{run_experiment, RunEnv, RunSummary, UnitOutcome, UnitStatus};

use crate::agents::{BackendKind, TraitLevel};
use crate::analysis::AnalysisError;
use crate::engine::{EngineError, GameConfig};
use crate::evolution::{EvolutionError, POPULATION_SIZE};
use crate::gateway::{GatewayConfig, GatewayError, GatewayMode};
use crate::rng::derive_seed;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const TEMPLATE_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    TraitGroups,
    TraitEvolution,
    PersonaEvolution,
}

impl Experiment {
    fn index(self) -> u64 {
        match self {
            Experiment::TraitGroups => 0,
            Experiment::TraitEvolution => 1,
            Experiment::PersonaEvolution => 2,
        }
    }

    pub fn default_turns(self) -> usize {
        match self {
            Experiment::TraitGroups => 21,
            Experiment::TraitEvolution | Experiment::PersonaEvolution => 7,
        }
    }

    pub fn default_trials(self) -> usize {
        match self {
            Experiment::TraitGroups => 10,
            Experiment::TraitEvolution => 1,
            Experiment::PersonaEvolution => 5,
        }
    }

    pub fn is_evolution(self) -> bool {
        self != Experiment::TraitGroups
    }
}

impl std::str::FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "trait-groups" => Ok(Experiment::TraitGroups),
            "trait-evolution" => Ok(Experiment::TraitEvolution),
            "persona-evolution" => Ok(Experiment::PersonaEvolution),
            other => Err(format!(
                "unknown experiment {other:?}; expected trait-groups, trait-evolution or persona-evolution"
            )),
        }
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::TraitGroups => "trait-groups",
            Experiment::TraitEvolution => "trait-evolution",
            Experiment::PersonaEvolution => "persona-evolution",
        })
    }
}

/// Everything needed to reproduce a run.
///
/// `turns` is the single source for the discussion length and replaces
/// `game.max_discussion_turns`; `game.rng_seed` is likewise replaced by
/// derived seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub game: GameConfig,
    pub backend: BackendKind,
    /// Parametric agents also punish those who let cheating pass.
    pub metanorm: bool,
    pub gateway: GatewayConfig,
    pub epochs: u32,
    pub rounds_per_epoch: usize,
    /// Discussion turns per round; `None` uses the experiment default.
    pub turns: Option<usize>,
    /// Rounds per condition (trait groups) or independent runs
    /// (evolution); `None` uses the experiment default.
    pub trials: Option<usize>,
    /// Units run concurrently. Never changes any output byte.
    pub jobs: usize,
    /// Personas requested from the model for the initial pool.
    pub pool_size: usize,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::TraitGroups,
            game: GameConfig::default(),
            backend: BackendKind::Parametric,
            metanorm: false,
            gateway: GatewayConfig::default(),
            epochs: 40,
            rounds_per_epoch: 21,
            turns: None,
            trials: None,
            jobs: 1,
            pool_size: 14,
            out: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("replay diverged from {log} at line {line}")]
    Divergence { log: PathBuf, line: usize },
}

impl ExperimentError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| ExperimentError::Io { path: path.to_path_buf(), source }
    }

    /// Errors the user can fix by changing configuration or environment.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_)
                | ExperimentError::Gateway(GatewayError::MissingApiKey(_) | GatewayError::NoFixtureStore(_))
        )
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(ExperimentError::io(path))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn effective_turns(&self) -> usize {
        self.turns.unwrap_or(self.experiment.default_turns())
    }

    pub fn effective_trials(&self) -> usize {
        self.trials.unwrap_or(self.experiment.default_trials())
    }

    pub fn game_config(&self) -> GameConfig {
        GameConfig { max_discussion_turns: self.effective_turns(), ..self.game.clone() }
    }

    /// Whether any part of the run talks to the gateway.
    pub fn needs_gateway(&self) -> bool {
        matches!(self.backend, BackendKind::Model | BackendKind::Replay)
            || self.experiment == Experiment::PersonaEvolution
    }

    /// Gateway settings with the mode forced by a replay backend and the
    /// fixture directory resolved against `run_dir`.
    pub fn gateway_config(&self, run_dir: &Path) -> GatewayConfig {
        let mut g = self.gateway.clone();
        if self.backend == BackendKind::Replay {
            g.mode = GatewayMode::Replay;
        }
        g.fixture_dir = match (&g.fixture_dir, g.mode) {
            (Some(d), _) if d.is_absolute() => Some(d.clone()),
            (Some(d), _) => Some(run_dir.join(d)),
            (None, GatewayMode::Record | GatewayMode::Replay) => Some(run_dir.join("fixtures")),
            (None, _) => None,
        };
        g
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.game_config().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.backend == BackendKind::Scripted {
            return bad("the scripted backend is for tests and cannot drive an experiment".into());
        }
        if self.experiment == Experiment::PersonaEvolution && self.backend == BackendKind::Parametric {
            return bad("persona-evolution needs a language-model backend (model or replay)".into());
        }
        if self.experiment.is_evolution() && self.game.n_agents != POPULATION_SIZE {
            return bad(format!("evolution experiments need n_agents = {POPULATION_SIZE}"));
        }
        if self.experiment.is_evolution() && (self.epochs == 0 || self.rounds_per_epoch == 0) {
            return bad("epochs and rounds_per_epoch must be positive".into());
        }
        if self.effective_trials() == 0 {
            return bad("trials must be positive".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be positive".into());
        }
        if self.experiment == Experiment::PersonaEvolution && self.pool_size < POPULATION_SIZE {
            return bad(format!("pool_size must be at least {POPULATION_SIZE}"));
        }
        if !(0.0..=2.0).contains(&self.gateway.temperature) {
            return bad("gateway.temperature must be within 0..=2".into());
        }
        Ok(())
    }

    /// The units of this run, in output order.
    pub fn units(&self) -> Vec<Unit> {
        let experiment = self.experiment;
        let seed_for = |i: u64| derive_seed(self.seed, &[experiment.index(), i]);
        match experiment {
            Experiment::TraitGroups => CONDITIONS
                .iter()
                .enumerate()
                .map(|(i, &(v, b))| Unit {
                    name: format!("trait_groups_{}", condition_label(v, b)),
                    seed: seed_for(i as u64),
                    condition: Some((v, b)),
                })
                .collect(),
            _ => (0..self.effective_trials())
                .map(|k| Unit {
                    name: format!("{}_t{}", experiment.to_string().replace('-', "_"), k + 1),
                    seed: seed_for(k as u64),
                    condition: None,
                })
                .collect(),
        }
    }
}

pub const CONDITIONS: [(TraitLevel, TraitLevel); 4] = [
    (TraitLevel::Low, TraitLevel::Low),
    (TraitLevel::Low, TraitLevel::High),
    (TraitLevel::High, TraitLevel::Low),
    (TraitLevel::High, TraitLevel::High),
];

/// `high_v_low_b` and so on.
pub fn condition_label(v: TraitLevel, b: TraitLevel) -> String {
    let word = |l: TraitLevel| match l {
        TraitLevel::Low => "low",
        TraitLevel::High => "high",
    };
    format!("{}_v_{}_b", word(v), word(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub name: String,
    pub seed: u64,
    /// (vengefulness, boldness) levels for a trait-groups unit.
    pub condition: Option<(TraitLevel, TraitLevel)>,
}

pub fn log_path(run_dir: &Path, unit: &str) -> PathBuf {
    run_dir.join("logs").join(format!("{unit}.jsonl"))
}

pub fn checkpoint_path(run_dir: &Path, unit: &str) -> PathBuf {
    run_dir.join("checkpoints").join(format!("{unit}.json"))
}
