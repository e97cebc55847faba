//! `normgame` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime
//! error, 3 replay divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use normgame::agents::BackendKind;
use normgame::analysis::{find_logs, write_exports, AnalysisError, LogView};
use normgame::experiment::{replay_log, run_experiment, Experiment, ExperimentError, RunConfig, RunEnv};
use normgame::gateway::GatewayMode;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "normgame", version, about = "Norms game simulator with language-model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the trait-groups experiment (or any experiment given by --experiment).
    Run(RunArgs),
    /// Run an evolution experiment; defaults to trait-evolution.
    Evolve(RunArgs),
    /// Write CSV/JSON/DOT exports for every run log under a directory.
    Analyze {
        dir: PathBuf,
        /// Output directory; defaults to <dir>/analysis.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a log's unit and check the regenerated log is byte-identical.
    Replay {
        log: PathBuf,
        /// Do not print the transcript.
        #[arg(long)]
        quiet: bool,
    },
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<Experiment>,
    /// parametric, model or replay.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// live, record, replay or stub.
    #[arg(long)]
    gateway_mode: Option<GatewayMode>,
    #[arg(long)]
    fixture_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    rounds_per_epoch: Option<usize>,
    #[arg(long)]
    turns: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// Units to run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parametric agents also punish those who let cheating pass.
    #[arg(long)]
    metanorm: bool,
    /// Continue evolution units from their checkpoints.
    #[arg(long)]
    resume: bool,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Divergence(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn build_config(args: &RunArgs, default_experiment: Experiment) -> Result<RunConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig { experiment: default_experiment, ..RunConfig::default() },
    };
    if let Some(e) = args.experiment {
        config.experiment = e;
    }
    if let Some(b) = args.backend {
        config.backend = b;
    }
    if let Some(m) = args.gateway_mode {
        config.gateway.mode = m;
    }
    if let Some(d) = &args.fixture_dir {
        config.gateway.fixture_dir = Some(d.clone());
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.epochs {
        config.epochs = n;
    }
    if let Some(n) = args.rounds_per_epoch {
        config.rounds_per_epoch = n;
    }
    if let Some(n) = args.turns {
        config.turns = Some(n);
    }
    if let Some(n) = args.trials {
        config.trials = Some(n);
    }
    if let Some(n) = args.jobs {
        config.jobs = n;
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    if args.metanorm {
        config.metanorm = true;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: &RunArgs, default_experiment: Experiment, evolve: bool) -> Result<(), Failure> {
    let config = build_config(args, default_experiment)?;
    if evolve && !config.experiment.is_evolution() {
        return Err(Failure::Config(anyhow::anyhow!(
            "evolve runs trait-evolution or persona-evolution, not {}",
            config.experiment
        )));
    }
    let env = RunEnv { resume: args.resume, ..RunEnv::default() };
    let summary = run_experiment(&config, &env)?;
    for u in &summary.units {
        println!("{}\t{:?}\t{}", u.unit, u.status, u.log.display());
    }
    println!("run directory: {}", summary.run_dir.display());
    Ok(())
}

fn cmd_analyze(dir: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let analysis_err = |e: AnalysisError| match e {
        AnalysisError::NoLogs(_) => Failure::Config(e.into()),
        other => Failure::Runtime(other.into()),
    };
    if !dir.is_dir() {
        return Err(Failure::Config(anyhow::anyhow!("{} is not a directory", dir.display())));
    }
    let paths = find_logs(dir).map_err(analysis_err)?;
    if paths.is_empty() {
        return Err(analysis_err(AnalysisError::NoLogs(dir.to_path_buf())));
    }
    let logs = paths.iter().map(|p| LogView::from_path(p)).collect::<Result<Vec<_>, _>>().map_err(analysis_err)?;
    let out = out.map_or_else(|| dir.join("analysis"), Path::to_path_buf);
    let summary = write_exports(&logs, &out).map_err(analysis_err)?;
    println!("analysed {} logs; wrote {} files to {}", logs.len(), summary.files.len(), out.display());
    Ok(())
}

fn cmd_replay(log: &Path, quiet: bool) -> Result<(), Failure> {
    let report = replay_log(log)?;
    if !quiet {
        print!("{}", report.transcript);
    }
    match report.divergence {
        None => {
            println!("replay of {} is byte-identical", report.log.display());
            Ok(())
        }
        Some(line) => Err(Failure::Divergence(format!(
            "replay diverged from {} at line {line}",
            report.log.display()
        ))),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a, Experiment::TraitGroups, false),
        Command::Evolve(a) => cmd_run(a, Experiment::TraitEvolution, true),
        Command::Analyze { dir, out } => cmd_analyze(dir, out.as_deref()),
        Command::Replay { log, quiet } => cmd_replay(log, *quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            let e = e.context("run failed");
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Divergence(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DIVERGENCE)
        }
    }
}
