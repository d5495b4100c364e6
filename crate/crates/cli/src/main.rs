//! `critedge`: analyze deformations, build criticality-preserving paths,
//! simulate deformed i.i.d. matrices and compare the resulting statistics.
//!
//! Exit codes: 0 on success, 1 when a check fails, 2 on invalid input.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Endpoint, SimulateArgs};
use config::{CommonFlags, RunConfig};

#[derive(Parser, Debug)]
#[command(version, about = "Critical edges of deformed non-Hermitian random matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Criticality report of a spectrum file; exits 1 when it is not critical.
    Analyze {
        spectrum: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Builds a deformation path (JSONL to --out) and validates it; exits 1 when validation fails.
    Flow {
        spectrum: Option<PathBuf>,
        /// Re-validate an existing JSONL path instead.
        #[arg(long)]
        path: Option<PathBuf>,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Monte Carlo statistic of a spectrum or path endpoint; per-trial CSV to --out.
    Simulate {
        spectrum: Option<PathBuf>,
        /// Simulate an endpoint of a JSONL path instead.
        #[arg(long)]
        path: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "last")]
        endpoint: Endpoint,
        /// Writes the eigenvalues of the first trial as CSV.
        #[arg(long)]
        eigenvalues: Option<PathBuf>,
        /// Adds a Girko check on the first trial.
        #[arg(long)]
        girko: bool,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Compares two per-trial CSV files; exits 1 when they disagree.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub fn input(message: String) -> Self {
        Self { code: 2, message }
    }

    pub fn failure(message: String) -> Self {
        Self { code: 1, message }
    }
}

fn with_pool<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| CliError::failure(e.to_string()))?;
    Ok(pool.install(f))
}

fn emit(summary: &serde_json::Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(summary).expect("serializable");
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::failure(format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Analyze { spectrum, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            let outcome = commands::analyze(&spectrum, &cfg)?;
            emit(&outcome.summary, flags.out.as_deref())?;
            Ok(outcome.passed)
        }
        Command::Flow { spectrum, path, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            let outcome = with_pool(cfg.jobs, || commands::flow(spectrum.as_deref(), path.as_deref(), &cfg, flags.out.as_deref()))??;
            emit(&outcome.summary, None)?;
            Ok(outcome.passed)
        }
        Command::Simulate { spectrum, path, endpoint, eigenvalues, girko, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            let args = SimulateArgs { input: spectrum.as_deref(), path: path.as_deref(), endpoint, eigenvalues, girko };
            let outcome = with_pool(cfg.jobs, || commands::simulate(&args, &cfg, flags.out.as_deref()))??;
            emit(&outcome.summary, None)?;
            Ok(outcome.passed)
        }
        Command::Compare { a, b, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            let outcome = commands::compare(&a, &b, &cfg)?;
            emit(&outcome.summary, flags.out.as_deref())?;
            Ok(outcome.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
