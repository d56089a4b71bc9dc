//! `spde-fd`: stability checks, single simulations and convergence studies.
//!
//! Exit codes: 0 success, 1 configuration or precondition error, 2 numerical
//! failure (solver breakdown or divergence), 3 a margin or order threshold
//! was not met.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spde_fd::experiments::ExperimentError;
use spde_fd::grid::GridError;
use spde_fd::model::ModelError;
use spde_fd::noise::NoiseError;
use spde_fd::schemes::SchemeError;
use thiserror::Error;

use commands::Outcome;
use manifest::{Command, FineReference, LevelList, RunManifest, SchemeChoice, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Estimation { .. } | ModelError::Krylov(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SchemeError> for CliError {
    fn from(e: SchemeError) -> Self {
        match e {
            SchemeError::Solver { .. } | SchemeError::Picard { .. } | SchemeError::NonFinite { .. } => {
                CliError::Numerical(e.to_string())
            }
            SchemeError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Numerical(_) | ExperimentError::StabilityFalsified { .. } => {
                CliError::Numerical(e.to_string())
            }
            ExperimentError::Scheme(s) => s.into(),
            ExperimentError::Model(m) => m.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NoiseError> for CliError {
    fn from(e: NoiseError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "spde-fd", version, about = "Finite-difference schemes for parabolic SPDEs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parabolicity, operator norms and per-level stability margins.
    Check(Flags),
    /// One run per level and scheme on a single Brownian path.
    Simulate(Flags),
    /// Monte Carlo convergence study with rate fits.
    Study(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON run manifest; flags override its keys.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Problem definition (JSON).
    #[arg(long)]
    problem: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeChoice>,
    /// Levels as "N:m,N:m,...".
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Explicit stability margin q (default 0.9 λ).
    #[arg(long)]
    q: Option<f64>,
    /// Error norm order r.
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    solver_tol: Option<f64>,
    /// Fine reference "N:m" for problems without a closed form.
    #[arg(long)]
    reference: Option<String>,
    /// Keep only the final state of simulated runs.
    #[arg(long)]
    no_dump: bool,
}

impl Flags {
    fn manifest(self) -> Result<RunManifest, CliError> {
        let base = match &self.manifest {
            Some(path) => RunManifest::load(path)?,
            None => RunManifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                ..Default::default()
            },
        };
        let reference = match &self.reference {
            Some(text) => {
                let levels = spde_fd::experiments::Level::parse_list(text).map_err(|e| CliError::Config(e.to_string()))?;
                match levels.as_slice() {
                    [l] => Some(FineReference { n: l.n, m: l.m }),
                    _ => return Err(CliError::Config("--reference takes a single N:m".into())),
                }
            }
            None => None,
        };
        Ok(base.overridden_by(RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: None,
            problem: self.problem,
            scheme: self.scheme,
            levels: self.levels.map(LevelList::Text),
            replicas: self.replicas,
            seed: self.seed,
            out: self.out,
            q: self.q,
            r: self.r,
            solver_tol: self.solver_tol,
            reference,
            thresholds: None,
            dump: self.no_dump.then_some(false),
        }))
    }
}

fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    let (command, flags) = match cli.command {
        Cmd::Check(f) => (Command::Check, f),
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Study(f) => (Command::Study, f),
    };
    let resolved = flags.manifest()?.resolve(command)?;
    match command {
        Command::Check => commands::check(&resolved),
        Command::Simulate => commands::simulate(&resolved),
        Command::Study => commands::study(&resolved),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // Usage errors are configuration errors, not numerical ones.
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
