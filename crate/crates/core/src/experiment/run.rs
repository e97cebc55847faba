use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    checkpoint_path, condition_label, log_path, Experiment, ExperimentError, RunConfig, Unit,
    CHECKPOINT_VERSION, TEMPLATE_VERSION,
};
use crate::agents::{seat_name, AgentId, AgentProfile, Backend, BackendKind, ModelBackend, ParametricBackend, Persona, PromptTemplates, TraitScore};
use crate::engine::play_round;
use crate::evolution::{run_epoch, EpochSettings, PersonaPool, Population, Regime, POPULATION_SIZE};
use crate::gateway::Gateway;
use crate::rng::{derive_seed, rng_cursor, rng_from_seed};
use crate::runlog::{kinds, EventSink, LogPhase, RunLog, SCHEMA_VERSION};

const ROUND_STREAM: u64 = 0;
const AGENT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 4;

/// Process-level knobs that are not part of the reproducible config.
#[derive(Debug, Clone, Default)]
pub struct RunEnv {
    /// Use this gateway instead of building one from the config.
    pub gateway: Option<Arc<Gateway>>,
    /// Continue evolution units from their checkpoints.
    pub resume: bool,
    /// Stop each evolution unit after this many epochs in this session,
    /// leaving a checkpoint as an interrupted run would.
    pub stop_after_epochs: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitStatus {
    Complete,
    Interrupted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitOutcome {
    pub unit: String,
    pub log: PathBuf,
    pub status: UnitStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub units: Vec<UnitOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    v: u32,
    unit: String,
    next_epoch: u32,
    population: Population,
    /// Length of the run log at the time of the checkpoint.
    log_bytes: u64,
    round: u64,
    complete: bool,
}

/// Config as stamped into run logs: process-level fields left out so they
/// cannot change log bytes.
fn logged_config(config: &RunConfig) -> Value {
    let mut v = serde_json::to_value(config).expect("serializable");
    if let Value::Object(map) = &mut v {
        map.remove("jobs");
        map.remove("out");
    }
    v
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), ExperimentError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(ExperimentError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(ExperimentError::io(path))
}

pub(crate) fn build_gateway(config: &RunConfig, run_dir: &Path, replaying: bool) -> Result<Option<Arc<Gateway>>, ExperimentError> {
    if !config.needs_gateway() {
        return Ok(None);
    }
    let mut g = config.gateway_config(run_dir);
    if replaying && g.mode.needs_api_key() {
        g.mode = crate::gateway::GatewayMode::Replay;
    }
    Ok(Some(Arc::new(Gateway::from_config(g)?)))
}

pub(crate) fn backend_for(
    config: &RunConfig,
    gateway: Option<&Arc<Gateway>>,
    profile: &AgentProfile,
) -> Box<dyn Backend> {
    match (config.backend, profile.persona.trait_values()) {
        (BackendKind::Parametric, Some((v, b))) => Box::new(ParametricBackend::new(v, b, config.metanorm)),
        _ => Box::new(ModelBackend::new(gateway.expect("validated: model backends have a gateway").clone())),
    }
}

fn run_start(config: &RunConfig, unit: &Unit, sink: &mut dyn EventSink) -> std::io::Result<()> {
    let mut payload = json!({
        "experiment": config.experiment,
        "unit": unit.name,
        "seed": unit.seed,
        "schema": SCHEMA_VERSION,
        "templates": TEMPLATE_VERSION,
        "config": logged_config(config),
    });
    if let Some((v, b)) = unit.condition {
        payload["group"] = json!(condition_label(v, b));
    }
    sink.set_round(0);
    sink.emit(LogPhase::Run, kinds::RUN_START, payload, 0)
}

/// All rounds of one trait-groups condition. Every round seats seven
/// fresh agents with traits drawn from the condition's ranges.
pub(crate) fn trait_groups_unit(
    config: &RunConfig,
    unit: &Unit,
    gateway: Option<&Arc<Gateway>>,
    sink: &mut dyn EventSink,
) -> Result<(), ExperimentError> {
    let (v_level, b_level) = unit.condition.expect("trait-groups unit has a condition");
    run_start(config, unit, sink).map_err(ExperimentError::io(Path::new(&unit.name)))?;
    let game = config.game_config();
    let rounds = config.effective_trials();
    for r in 0..rounds as u64 {
        sink.set_round(r);
        let mut rng = rng_from_seed(derive_seed(unit.seed, &[AGENT_STREAM, r]));
        let profiles: Vec<AgentProfile> = (0..game.n_agents)
            .map(|i| {
                let vengefulness = v_level.sample(&mut rng);
                let boldness = b_level.sample(&mut rng);
                AgentProfile {
                    id: AgentId(r * game.n_agents as u64 + i as u64),
                    name: seat_name(i),
                    persona: Persona::Traits { vengefulness, boldness },
                    backend: config.backend,
                }
            })
            .collect();
        let mut backends: Vec<Box<dyn Backend>> =
            profiles.iter().map(|p| backend_for(config, gateway, p)).collect();
        play_round(&game.with_seed(derive_seed(unit.seed, &[ROUND_STREAM, r])), &profiles, &mut backends, sink)?;
    }
    sink.emit(LogPhase::Run, kinds::RUN_END, json!({"rounds": rounds}), 0)
        .map_err(ExperimentError::io(Path::new(&unit.name)))
}

fn regime(config: &RunConfig) -> Regime {
    if config.experiment == Experiment::PersonaEvolution {
        Regime::Personas
    } else {
        Regime::Traits
    }
}

pub(crate) fn evolution_start(
    config: &RunConfig,
    unit: &Unit,
    gateway: Option<&Arc<Gateway>>,
    sink: &mut dyn EventSink,
) -> Result<Population, ExperimentError> {
    let io = |e| ExperimentError::Io { path: PathBuf::from(&unit.name), source: e };
    run_start(config, unit, sink).map_err(io)?;
    let mut rng = rng_from_seed(derive_seed(unit.seed, &[INIT_STREAM]));
    let personas: Vec<Persona> = match regime(config) {
        Regime::Traits => (0..POPULATION_SIZE)
            .map(|_| {
                let v = TraitScore::new(rand::Rng::random_range(&mut rng, 1..=7)).expect("in range");
                let b = TraitScore::new(rand::Rng::random_range(&mut rng, 1..=7)).expect("in range");
                Persona::Traits { vengefulness: v, boldness: b }
            })
            .collect(),
        Regime::Personas => {
            let gateway = gateway.expect("validated: persona runs have a gateway");
            let pool = PersonaPool::generate(gateway, &PromptTemplates::V1, config.pool_size)?;
            let chosen = pool.sample(POPULATION_SIZE, &mut rng);
            sink.emit(
                LogPhase::Run,
                kinds::POOL,
                json!({"entries": pool.entries, "selected": chosen}),
                rng_cursor(&rng),
            )
            .map_err(io)?;
            chosen
                .into_iter()
                .map(|e| Persona::text(e.description).expect("pool entries are non-empty"))
                .collect()
        }
    };
    let members = personas
        .into_iter()
        .enumerate()
        .map(|(i, persona)| AgentProfile { id: AgentId(i as u64), name: seat_name(i), persona, backend: config.backend })
        .collect();
    Ok(Population::new(members))
}

pub(crate) fn evolution_epoch(
    config: &RunConfig,
    unit: &Unit,
    epoch: u32,
    population: &Population,
    gateway: Option<&Arc<Gateway>>,
    sink: &mut dyn EventSink,
) -> Result<Population, ExperimentError> {
    let settings = EpochSettings {
        game: config.game_config(),
        rounds_per_epoch: config.rounds_per_epoch,
        regime: regime(config),
        seed: unit.seed,
        templates: PromptTemplates::V1,
    };
    let mut factory = |p: &AgentProfile| backend_for(config, gateway, p);
    let (_, next) = run_epoch(epoch, population, &settings, &mut factory, gateway.map(|g| g.as_ref()), sink)?;
    Ok(next)
}

pub(crate) fn evolution_end(config: &RunConfig, sink: &mut dyn EventSink) -> std::io::Result<()> {
    sink.emit(LogPhase::Run, kinds::RUN_END, json!({"epochs": config.epochs}), 0)
}

fn open_log(path: &Path) -> Result<RunLog<BufWriter<File>>, ExperimentError> {
    let file = File::create(path).map_err(ExperimentError::io(path))?;
    let name = path.file_stem().expect("log file name").to_string_lossy().into_owned();
    Ok(RunLog::new(BufWriter::new(file), name))
}

fn flush(log: &mut RunLog<BufWriter<File>>, path: &Path) -> Result<(), ExperimentError> {
    log.flush().map_err(ExperimentError::io(path))
}

fn execute_unit(
    config: &RunConfig,
    unit: &Unit,
    gateway: Option<&Arc<Gateway>>,
    run_dir: &Path,
    env: &RunEnv,
) -> Result<UnitOutcome, ExperimentError> {
    let path = log_path(run_dir, &unit.name);
    let outcome = |status| UnitOutcome { unit: unit.name.clone(), log: path.clone(), status };
    if !config.experiment.is_evolution() {
        let mut log = open_log(&path)?;
        trait_groups_unit(config, unit, gateway, &mut log)?;
        flush(&mut log, &path)?;
        return Ok(outcome(UnitStatus::Complete));
    }

    let cp_path = checkpoint_path(run_dir, &unit.name);
    let checkpoint: Option<Checkpoint> = if env.resume && cp_path.exists() {
        let text = std::fs::read_to_string(&cp_path).map_err(ExperimentError::io(&cp_path))?;
        let cp: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", cp_path.display())))?;
        if cp.v != CHECKPOINT_VERSION {
            return Err(ExperimentError::Config(format!("{}: unsupported checkpoint version {}", cp_path.display(), cp.v)));
        }
        Some(cp)
    } else {
        None
    };

    let save = |log: &RunLog<BufWriter<File>>, next_epoch: u32, population: &Population, complete: bool| {
        write_json(
            &cp_path,
            &Checkpoint {
                v: CHECKPOINT_VERSION,
                unit: unit.name.clone(),
                next_epoch,
                population: population.clone(),
                log_bytes: log.bytes_written(),
                round: log.round(),
                complete,
            },
        )
    };

    let (mut log, mut population, start) = match checkpoint {
        Some(cp) if cp.complete => return Ok(outcome(UnitStatus::Complete)),
        Some(cp) => {
            let mut file = OpenOptions::new().read(true).write(true).open(&path).map_err(ExperimentError::io(&path))?;
            let len = file.metadata().map_err(ExperimentError::io(&path))?.len();
            if len < cp.log_bytes {
                return Err(ExperimentError::Config(format!(
                    "{} is shorter ({len} bytes) than its checkpoint ({} bytes)",
                    path.display(),
                    cp.log_bytes
                )));
            }
            file.set_len(cp.log_bytes).map_err(ExperimentError::io(&path))?;
            file.seek(SeekFrom::End(0)).map_err(ExperimentError::io(&path))?;
            tracing::info!(unit = %unit.name, epoch = cp.next_epoch, "resuming from checkpoint");
            let log = RunLog::resume(BufWriter::new(file), unit.name.clone(), cp.round, cp.log_bytes);
            (log, cp.population, cp.next_epoch)
        }
        None => {
            let mut log = open_log(&path)?;
            let population = evolution_start(config, unit, gateway, &mut log)?;
            flush(&mut log, &path)?;
            save(&log, 0, &population, false)?;
            (log, population, 0)
        }
    };

    let mut done_this_session = 0;
    for epoch in start..config.epochs {
        if env.stop_after_epochs.is_some_and(|n| done_this_session >= n) {
            return Ok(outcome(UnitStatus::Interrupted));
        }
        population = evolution_epoch(config, unit, epoch, &population, gateway, &mut log)?;
        flush(&mut log, &path)?;
        save(&log, epoch + 1, &population, false)?;
        done_this_session += 1;
        tracing::debug!(unit = %unit.name, epoch, "epoch done");
    }
    evolution_end(config, &mut log).map_err(ExperimentError::io(&path))?;
    flush(&mut log, &path)?;
    save(&log, config.epochs, &population, true)?;
    Ok(outcome(UnitStatus::Complete))
}

/// Runs every unit of `config`, writing the run directory at `config.out`.
pub fn run_experiment(config: &RunConfig, env: &RunEnv) -> Result<RunSummary, ExperimentError> {
    config.validate()?;
    let run_dir = config.out.clone();
    let subdirs: &[&str] = if config.experiment.is_evolution() { &["logs", "checkpoints"] } else { &["logs"] };
    for sub in subdirs {
        let d = run_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(ExperimentError::io(&d))?;
    }
    let config_path = run_dir.join("config.json");
    if env.resume && config_path.exists() {
        let stored = RunConfig::load(&config_path)?;
        if logged_config(&stored) != logged_config(config) {
            return Err(ExperimentError::Config(format!(
                "cannot resume: {} differs from the requested config",
                config_path.display()
            )));
        }
    } else {
        write_json(&config_path, config)?;
        write_json(
            &run_dir.join("run_meta.json"),
            &json!({
                "log_schema": SCHEMA_VERSION,
                "checkpoint_schema": CHECKPOINT_VERSION,
                "templates": TEMPLATE_VERSION,
                "version": env!("CARGO_PKG_VERSION"),
            }),
        )?;
    }

    let gateway = match &env.gateway {
        Some(g) => Some(g.clone()),
        None => build_gateway(config, &run_dir, false)?,
    };
    let units = config.units();
    let exec = |u: &Unit| execute_unit(config, u, gateway.as_ref(), &run_dir, env);
    let results: Vec<Result<UnitOutcome, ExperimentError>> = if config.jobs <= 1 {
        units.iter().map(exec).collect()
    } else {
        let mut results = Vec::with_capacity(units.len());
        for chunk in units.chunks(config.jobs) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|u| s.spawn(|| exec(u))).collect();
                results.extend(handles.into_iter().map(|h| h.join().expect("unit thread panicked")));
            });
        }
        results
    };

    if let Some(g) = &gateway {
        let calls = g.calls();
        if !calls.is_empty() {
            let path = run_dir.join("calls.jsonl");
            let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(ExperimentError::io(&path))?;
            for c in calls {
                let mut line = serde_json::to_vec(&c).expect("serializable");
                line.push(b'\n');
                f.write_all(&line).map_err(ExperimentError::io(&path))?;
            }
        }
    }

    let units = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(RunSummary { run_dir, units })
}
