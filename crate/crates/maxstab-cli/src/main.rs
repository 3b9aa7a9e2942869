//! `maxstab`: configuration-driven experiment runner.
//!
//! Exit status: 0 on success, 2 on UNDECIDED or GAP verdicts, 1 on errors
//! and failed checks.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maxstab::exec::{self, Execution};
use thiserror::Error;

use crate::commands::Status;
use crate::config::Common;
use crate::output::{config_hash, write_bundle, Stamp};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("no seed: pass --seed or set `seed` in the config file")]
    MissingSeed,
    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Set(#[from] maxstab::censor_sets::SetError),
    #[error(transparent)]
    Path(#[from] maxstab::path_engine::PathError),
    #[error(transparent)]
    Coupling(#[from] maxstab::coupling_lab::CouplingError),
    #[error(transparent)]
    Sign(#[from] maxstab::sign_field::SignError),
    #[error(transparent)]
    Prune(#[from] maxstab::spectral_pruning::PruneError),
    #[error(transparent)]
    Stats(#[from] maxstab::stats_report::StatsError),
}

#[derive(Debug, Parser)]
#[command(name = "maxstab", version, about = "Monte Carlo experiments on the stability of Brownian local maxima")]
struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs the replica loops sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print the configuration schema (of the given subcommand, or all).
    #[arg(long, global = true)]
    schema: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify a censoring set as STABLE, UNSTABLE, NEGLIGIBLE or UNDECIDED.
    ClassifySet,
    /// Maximizer match probability along a grid ladder.
    MatchProb,
    /// Both sides of the second-moment identity.
    VerifyFormula,
    /// Exact random-walk oracle over the fixture matrix.
    Oracle,
    /// Time change of a set: pushforward, variance and correspondence checks.
    TimeChange,
    /// Build and certify a set; writes its descriptor.
    GenerateSet,
    /// Random atom pruning.
    Prune,
    /// Aggregate earlier outputs.
    Report {
        /// Output directories or evidence.csv files.
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ClassifySet => "classify-set",
            Command::MatchProb => "match-prob",
            Command::VerifyFormula => "verify-formula",
            Command::Oracle => "oracle",
            Command::TimeChange => "time-change",
            Command::GenerateSet => "generate-set",
            Command::Prune => "prune",
            Command::Report { .. } => "report",
        }
    }
}

/// Parse, seed, hash and run one subcommand.
fn run_with<T: Common>(
    cli: &Cli,
    name: &str,
    text: &str,
    body: impl FnOnce(&T, u64) -> commands::Outcome,
) -> Result<Status, CliError> {
    let mut cfg: T = config::parse(text).map_err(|e| {
        let origin = cli.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        CliError::Config(format!("config {origin}: {e}"))
    })?;
    let seed = cli.seed.or(cfg.seed()).ok_or(CliError::MissingSeed)?;
    cfg.set_seed(seed);
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.out().cloned())
        .unwrap_or_else(|| PathBuf::from("maxstab-out"));
    let stamp = Stamp {
        command: name.to_string(),
        config_hash: config_hash(&cfg),
        seed,
    };
    let (bundle, status) = body(&cfg, seed)?;
    write_bundle(&dir, &stamp, &bundle)?;
    eprintln!("{name}: outputs in {}", dir.display());
    Ok(status)
}

fn run(cli: &Cli, exec: Execution) -> Result<Status, CliError> {
    let command = cli.command.as_ref().ok_or_else(|| CliError::Config("no subcommand given; see --help".into()))?;
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?,
        None => String::new(),
    };
    let name = command.name();
    match command {
        Command::ClassifySet => run_with(cli, name, &text, |c, s| commands::classify(c, s, exec)),
        Command::MatchProb => run_with(cli, name, &text, |c, s| commands::match_prob(c, s, exec)),
        Command::VerifyFormula => run_with(cli, name, &text, |c, s| commands::verify_formula(c, s, exec)),
        Command::Oracle => run_with(cli, name, &text, |c, s| commands::oracle(c, s, exec)),
        Command::TimeChange => run_with(cli, name, &text, |c, s| commands::time_change(c, s, exec)),
        Command::GenerateSet => run_with(cli, name, &text, commands::generate_set),
        Command::Prune => run_with(cli, name, &text, |c, s| commands::prune(c, s, exec)),
        Command::Report { inputs } => run_with(cli, name, &text, |c: &config::ReportConfig, _| {
            let mut c = c.clone();
            c.inputs.extend(inputs.iter().cloned());
            commands::report(&c)
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.schema {
        let names: Vec<&str> = match &cli.command {
            Some(c) => vec![c.name()],
            None => config::COMMANDS.to_vec(),
        };
        for n in names {
            println!("{}", config::schema(n).expect("known subcommand"));
        }
        return ExitCode::SUCCESS;
    }
    let exec = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        Some(1) => Execution::Sequential,
        Some(n) => {
            if let Err(e) = exec::set_threads(n) {
                eprintln!("error: --threads {n}: {e}");
                return ExitCode::from(1);
            }
            Execution::Parallel
        }
        None => Execution::Parallel,
    };
    match run(&cli, exec) {
        Ok(Status::Success(msg)) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Ok(Status::Inconclusive(msg)) => {
            println!("{msg}");
            ExitCode::from(2)
        }
        Ok(Status::Failed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
