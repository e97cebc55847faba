use std::collections::BTreeMap;
use std::path::Path;

use normgame::agents::BackendKind;
use normgame::experiment::{replay_log, run_experiment, Experiment, RunConfig, RunEnv, UnitStatus};
use normgame::gateway::GatewayMode;

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Everything except `config.json`, which records `out` and `jobs`.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut t = tree(dir);
    t.remove("config.json");
    t
}

fn trait_evolution(out: &Path, seed: u64) -> RunConfig {
    RunConfig {
        experiment: Experiment::TraitEvolution,
        epochs: 6,
        rounds_per_epoch: 3,
        turns: Some(5),
        trials: Some(3),
        out: out.to_path_buf(),
        seed,
        ..RunConfig::default()
    }
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let split = dir.path().join("split");
    run_experiment(&trait_evolution(&whole, 4), &RunEnv::default()).unwrap();

    let config = trait_evolution(&split, 4);
    let first = run_experiment(&config, &RunEnv { stop_after_epochs: Some(2), ..RunEnv::default() }).unwrap();
    assert!(first.units.iter().all(|u| u.status == UnitStatus::Interrupted));
    // A torn write after the checkpoint must be discarded on resume.
    let log = &first.units[0].log;
    let mut bytes = std::fs::read(log).unwrap();
    bytes.extend_from_slice(b"{\"v\":1,\"run_id\":\"torn");
    std::fs::write(log, bytes).unwrap();

    let resume = RunEnv { resume: true, stop_after_epochs: Some(3), ..RunEnv::default() };
    let second = run_experiment(&config, &resume).unwrap();
    assert!(second.units.iter().all(|u| u.status == UnitStatus::Interrupted));
    let third = run_experiment(&config, &RunEnv { resume: true, ..RunEnv::default() }).unwrap();
    assert!(third.units.iter().all(|u| u.status == UnitStatus::Complete));

    let (a, b) = (outputs(&whole), outputs(&split));
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (k, v) in &a {
        assert!(v == &b[k], "{k} differs");
    }
}

#[test]
fn resume_refuses_a_changed_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = trait_evolution(dir.path(), 1);
    run_experiment(&config, &RunEnv { stop_after_epochs: Some(1), ..RunEnv::default() }).unwrap();
    let changed = RunConfig { seed: 2, ..config };
    let err = run_experiment(&changed, &RunEnv { resume: true, ..RunEnv::default() }).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn reruns_and_parallel_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [(1, "a"), (1, "b"), (4, "c")]
        .into_iter()
        .map(|(jobs, name)| {
            let out = dir.path().join(name);
            run_experiment(&RunConfig { jobs, ..trait_evolution(&out, 8) }, &RunEnv::default()).unwrap();
            outputs(&out)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);

    let groups: Vec<_> = [(1, "g1"), (3, "g3")]
        .into_iter()
        .map(|(jobs, name)| {
            let out = dir.path().join(name);
            let config = RunConfig { jobs, trials: Some(4), out: out.clone(), seed: 8, ..RunConfig::default() };
            run_experiment(&config, &RunEnv::default()).unwrap();
            outputs(&out)
        })
        .collect();
    assert_eq!(groups[0].len(), 4 + 1);
    assert_eq!(groups[0], groups[1]);
}

#[test]
fn replay_detects_edits() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&trait_evolution(dir.path(), 3), &RunEnv::default()).unwrap();
    let log = &summary.units[1].log;
    let report = replay_log(log).unwrap();
    assert_eq!(report.divergence, None);
    assert!(report.transcript.contains("== round 0 =="));
    assert!(report.transcript.contains("== epoch 5 done =="));

    let mut bytes = std::fs::read(log).unwrap();
    let text = String::from_utf8(bytes.clone()).unwrap();
    let line = 12;
    let offset: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    let pos = offset + text[offset..].find("\"round\":").unwrap() + 8;
    bytes[pos] = if bytes[pos] == b'9' { b'8' } else { b'9' };
    std::fs::write(log, bytes).unwrap();
    assert_eq!(replay_log(log).unwrap().divergence, Some(line));
}

#[test]
fn persona_evolution_runs_offline() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig {
        experiment: Experiment::PersonaEvolution,
        backend: BackendKind::Model,
        epochs: 2,
        rounds_per_epoch: 1,
        turns: Some(3),
        trials: Some(1),
        out: dir.path().to_path_buf(),
        seed: 5,
        ..RunConfig::default()
    };
    config.gateway.mode = GatewayMode::Stub;
    let summary = run_experiment(&config, &RunEnv::default()).unwrap();
    let log = std::fs::read_to_string(&summary.units[0].log).unwrap();
    assert_eq!(log.matches("\"type\":\"persona_pool\"").count(), 1);
    assert_eq!(log.matches("\"type\":\"embeddings\"").count(), 2);
    assert_eq!(log.matches("\"type\":\"rephrase\"").count(), 8);
    assert_eq!(replay_log(&summary.units[0].log).unwrap().divergence, None);
}

#[test]
fn invalid_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = RunConfig { out: dir.path().to_path_buf(), ..RunConfig::default() };
    let bad = [
        RunConfig { backend: BackendKind::Scripted, ..base.clone() },
        RunConfig { experiment: Experiment::PersonaEvolution, ..base.clone() },
        RunConfig { jobs: 0, ..base.clone() },
        RunConfig { trials: Some(0), ..base.clone() },
        RunConfig { experiment: Experiment::TraitEvolution, epochs: 0, ..base.clone() },
    ];
    for c in bad {
        assert!(run_experiment(&c, &RunEnv::default()).unwrap_err().is_config());
    }
    let json = r#"{"experiment": "trait-groups", "sede": 3}"#;
    let path = dir.path().join("c.json");
    std::fs::write(&path, json).unwrap();
    assert!(RunConfig::load(&path).unwrap_err().is_config());
}
