use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{build_gateway, evolution_end, evolution_epoch, evolution_start, trait_groups_unit};
use super::{ExperimentError, RunConfig};
use crate::agents::AgentProfile;
use crate::engine::DiscussionEvent;
use crate::protocol::{render_command, Command};
use crate::runlog::{first_divergence, kinds, parse_log, RunLog};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub unit: String,
    pub log: PathBuf,
    /// First differing line, 1-based, if the regenerated log differs.
    pub divergence: Option<usize>,
    pub transcript: String,
}

/// Re-executes the unit that produced `log` and compares bytes.
///
/// The run directory is the parent of the log's `logs/` directory and
/// must hold the run's `config.json`. Live and record gateways are
/// switched to replay, so no network is used.
pub fn replay_log(log: &Path) -> Result<ReplayReport, ExperimentError> {
    let original = std::fs::read(log).map_err(ExperimentError::io(log))?;
    let run_dir = log
        .parent()
        .and_then(Path::parent)
        .ok_or_else(|| ExperimentError::Config(format!("{} is not inside <run>/logs/", log.display())))?;
    let config = RunConfig::load(&run_dir.join("config.json"))?;
    let stem = log.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let unit = config
        .units()
        .into_iter()
        .find(|u| u.name == stem)
        .ok_or_else(|| ExperimentError::Config(format!("{stem} is not a unit of the run in {}", run_dir.display())))?;
    let gateway = build_gateway(&config, run_dir, true)?;
    let gateway = gateway.as_ref();

    let mut regenerated = RunLog::in_memory(unit.name.clone());
    if config.experiment.is_evolution() {
        let mut population = evolution_start(&config, &unit, gateway, &mut regenerated)?;
        for epoch in 0..config.epochs {
            population = evolution_epoch(&config, &unit, epoch, &population, gateway, &mut regenerated)?;
        }
        evolution_end(&config, &mut regenerated).map_err(ExperimentError::io(log))?;
    } else {
        trait_groups_unit(&config, &unit, gateway, &mut regenerated)?;
    }
    let regenerated = regenerated.into_inner();
    Ok(ReplayReport {
        unit: unit.name,
        log: log.to_path_buf(),
        divergence: first_divergence(&original, &regenerated),
        transcript: transcript(&original),
    })
}

fn command_text(c: &Command) -> String {
    render_command(c)
}

/// Human-readable transcript: test choices and discussion turns with
/// speaker names. Unreadable logs give a one-line note instead.
pub fn transcript(log: &[u8]) -> String {
    let parsed = match parse_log(log) {
        Ok(p) => p,
        Err(e) => return format!("(transcript unavailable: {e})\n"),
    };
    let mut names: BTreeMap<u64, String> = BTreeMap::new();
    let mut out = String::new();
    for r in &parsed.records {
        match r.kind.as_str() {
            kinds::ROUND_START => {
                if let Ok(agents) = serde_json::from_value::<Vec<AgentProfile>>(r.payload["agents"].clone()) {
                    names = agents.into_iter().map(|a| (a.id.0, a.name)).collect();
                }
                writeln!(out, "== round {} ==", r.round).unwrap();
            }
            kinds::DECISION => {
                let agent = r.payload["agent"].as_u64().unwrap_or(u64::MAX);
                let name = names.get(&agent).map_or("?", String::as_str);
                if let Ok(c) = serde_json::from_value::<Command>(r.payload["command"].clone()) {
                    writeln!(out, "test  {name}: {}", command_text(&c)).unwrap();
                }
            }
            kinds::TURN => {
                if let Ok(e) = serde_json::from_value::<DiscussionEvent>(r.payload.clone()) {
                    let name = names.get(&e.speaker.0).map_or("?", String::as_str);
                    let utterance = e.utterance.replace('\n', " ");
                    writeln!(out, "turn {:>2} {name}: {utterance}  => {}", e.turn_index, command_text(&e.command)).unwrap();
                }
            }
            kinds::EPOCH_END => {
                writeln!(out, "== epoch {} done ==", r.payload["epoch"]).unwrap();
            }
            _ => {}
        }
    }
    out
}
