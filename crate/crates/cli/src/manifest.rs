//! Run manifests: a JSON file with the same keys as the command-line flags.
//! Flags take precedence over the file; relative paths in the file are
//! resolved against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spde_fd::experiments::Level;
use spde_fd::model::ProblemConfig;
use spde_fd::schemes::SchemeKind;

use crate::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchemeChoice {
    Implicit,
    Explicit,
    Both,
}

impl SchemeChoice {
    pub fn kinds(self) -> Vec<SchemeKind> {
        match self {
            SchemeChoice::Implicit => vec![SchemeKind::Implicit],
            SchemeChoice::Explicit => vec![SchemeKind::Explicit],
            SchemeChoice::Both => vec![SchemeKind::Implicit, SchemeKind::Explicit],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Check,
    Simulate,
    Study,
}

/// Levels as `"N:m,N:m"` or as a list of `{"N": .., "m": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LevelList {
    Text(String),
    List(Vec<Level>),
}

impl LevelList {
    fn resolve(&self) -> Result<Vec<Level>, CliError> {
        match self {
            LevelList::Text(s) => Level::parse_list(s).map_err(|e| CliError::Config(e.to_string())),
            LevelList::List(v) => Ok(v.clone()),
        }
    }
}

/// Minimum fitted orders per sweep; a missing entry is not checked.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub diagonal: Option<f64>,
}

impl Thresholds {
    pub fn defaults() -> Self {
        Self {
            h: Some(0.9),
            tau: Some(0.4),
            diagonal: Some(0.9),
        }
    }
}

/// Fine reference grid for problems without a closed-form solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineReference {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub problem: Option<PathBuf>,
    #[serde(default)]
    pub scheme: Option<SchemeChoice>,
    #[serde(default)]
    pub levels: Option<LevelList>,
    #[serde(default)]
    pub replicas: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub q: Option<f64>,
    /// Error norm order.
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub solver_tol: Option<f64>,
    #[serde(default)]
    pub reference: Option<FineReference>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
    /// Write every state of simulated trajectories (default true).
    #[serde(default)]
    pub dump: Option<bool>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut manifest: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))?;
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "manifest schema_version {} is not supported (expected {MANIFEST_SCHEMA_VERSION})",
                manifest.schema_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut manifest.problem, &mut manifest.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(manifest)
    }

    /// `other`'s keys replace ours where present.
    pub fn overridden_by(self, other: RunManifest) -> RunManifest {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: other.command.or(self.command),
            problem: other.problem.or(self.problem),
            scheme: other.scheme.or(self.scheme),
            levels: other.levels.or(self.levels),
            replicas: other.replicas.or(self.replicas),
            seed: other.seed.or(self.seed),
            out: other.out.or(self.out),
            q: other.q.or(self.q),
            r: other.r.or(self.r),
            solver_tol: other.solver_tol.or(self.solver_tol),
            reference: other.reference.or(self.reference),
            thresholds: other.thresholds.or(self.thresholds),
            dump: other.dump.or(self.dump),
        }
    }

    pub fn resolve(&self, command: Command) -> Result<Resolved, CliError> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::Config(format!(
                    "manifest is for command {c:?}, invoked as {command:?}"
                )));
            }
        }
        let problem_path = self
            .problem
            .clone()
            .ok_or_else(|| CliError::Config("no problem file given (--problem)".into()))?;
        let text = fs::read_to_string(&problem_path)
            .map_err(|e| CliError::Config(format!("cannot read problem file {}: {e}", problem_path.display())))?;
        let problem = ProblemConfig::from_json(&text).map_err(|e| CliError::Config(e.to_string()))?;
        let levels = match &self.levels {
            Some(l) => l.resolve()?,
            None => Vec::new(),
        };
        if levels.is_empty() {
            return Err(CliError::Config("no levels given (--levels N:m,...)".into()));
        }
        if let Some(l) = levels.iter().find(|l| l.n < 2) {
            return Err(CliError::Config(format!("level {l} needs N >= 2")));
        }
        let out = self.out.clone();
        if let Some(dir) = &out {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
        } else if command != Command::Check {
            return Err(CliError::Config("no output directory given (--out)".into()));
        }
        let replicas = self.replicas.unwrap_or(1);
        if replicas == 0 {
            return Err(CliError::Config("replicas must be at least 1".into()));
        }
        Ok(Resolved {
            problem,
            scheme: self.scheme.unwrap_or(SchemeChoice::Implicit),
            levels,
            replicas,
            seed: self.seed.unwrap_or(0),
            out,
            q: self.q,
            r: self.r.unwrap_or(0),
            solver_tol: self.solver_tol,
            reference: self.reference,
            thresholds: self.thresholds.clone().unwrap_or_else(Thresholds::defaults),
            dump: self.dump.unwrap_or(true),
            manifest: RunManifest {
                command: Some(command),
                ..self.clone()
            },
        })
    }
}

/// A manifest with defaults applied and the problem file loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub problem: ProblemConfig,
    pub scheme: SchemeChoice,
    pub levels: Vec<Level>,
    pub replicas: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub q: Option<f64>,
    pub r: usize,
    pub solver_tol: Option<f64>,
    pub reference: Option<FineReference>,
    pub thresholds: Thresholds,
    pub dump: bool,
    /// The effective manifest, stored next to the outputs.
    pub manifest: RunManifest,
}
