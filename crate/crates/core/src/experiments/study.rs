use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::{GridFn, GridSpec};
use crate::model::ProblemSpec;
use crate::noise::{replica_seed, WienerPath};
use crate::schemes::{
    certify_explicit, run_with, run_with_certificate, Certificate, RunSummary, SchemeConfig, SchemeError, SchemeKind,
    Trajectory, DEFAULT_SOLVER_TOL,
};

use super::reference::{cache_key, cached_trajectory, OracleReference, Reference, TrajectoryReference};
use super::{fit_rate, mean_of_squares, ErrorAccumulator, ErrorReport, ExperimentError, RateFit};

/// One resolution `(N, m)` of a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Level {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
}

impl Level {
    pub fn new(n: usize, m: usize) -> Self {
        Self { n, m }
    }

    /// Parses `"N:m,N:m,..."`.
    pub fn parse_list(text: &str) -> Result<Vec<Level>, ExperimentError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|item| {
                let (n, m) = item
                    .split_once(':')
                    .ok_or_else(|| ExperimentError::Invalid(format!("level {item:?} is not of the form N:m")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| ExperimentError::Invalid(format!("level {item:?}: {e}")))
                };
                Ok(Level::new(parse(n)?, parse(m)?))
            })
            .collect()
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.n, self.m)
    }
}

/// Source of the "exact" solution in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReferenceChoice {
    /// Closed-form mode with transport coefficient `b` (`b = 0`: heat).
    Oracle { b: f64 },
    /// Implicit run at `(N, m)`, optionally cached under `cache`.
    Fine {
        #[serde(rename = "N")]
        n: usize,
        m: usize,
        #[serde(skip)]
        cache: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub kind: SchemeKind,
    pub levels: Vec<Level>,
    pub replicas: usize,
    pub seed: u64,
    pub r: usize,
    pub q: Option<f64>,
    pub solver_tol: f64,
    pub reference: ReferenceChoice,
}

impl StudyConfig {
    pub fn new(kind: SchemeKind, levels: Vec<Level>, replicas: usize, seed: u64, reference: ReferenceChoice) -> Self {
        Self {
            kind,
            levels,
            replicas,
            seed,
            r: 0,
            q: None,
            solver_tol: DEFAULT_SOLVER_TOL,
            reference,
        }
    }

    pub fn with_q(mut self, q: Option<f64>) -> Self {
        self.q = q;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// `m` fixed, `N` varies; fitted against `h`.
    H,
    /// `N` fixed, `m` varies; fitted against `τ`.
    Tau,
    /// Both vary together; fitted against `h`.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub levels: Vec<Level>,
    /// Levels left out of the fit (uncertified or diverged).
    pub excluded: Vec<Level>,
    pub fit: Option<RateFit>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub tau: f64,
    /// `(mean over replicas of sup_H_error²)^{1/2}`.
    pub rms_sup_h_error: f64,
    /// Standard error of `rms_sup_h_error` (delta method).
    pub rms_sup_h_error_se: f64,
    /// `(mean over replicas of int_V_error_sq)^{1/2}`.
    pub rms_int_v_error: f64,
    pub diverged_replicas: usize,
    /// Explicit levels only.
    pub certificate: Option<Certificate>,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: SchemeKind,
    pub seed: u64,
    pub replicas: usize,
    pub r: usize,
    pub reference: ReferenceChoice,
    pub problem: Option<String>,
    pub levels: Vec<LevelSummary>,
    pub sweeps: Vec<Sweep>,
    /// One report per (level, replica), level-major.
    pub records: Vec<ErrorReport>,
}

impl StudyResult {
    pub fn sweep(&self, axis: SweepAxis) -> Option<&Sweep> {
        self.sweeps.iter().find(|s| s.axis == axis)
    }
}

fn check_levels(levels: &[Level]) -> Result<Level, ExperimentError> {
    if levels.len() < 3 {
        return Err(ExperimentError::Invalid(format!(
            "a study needs at least 3 levels, got {}",
            levels.len()
        )));
    }
    let distinct: BTreeSet<Level> = levels.iter().copied().collect();
    if distinct.len() != levels.len() {
        return Err(ExperimentError::Invalid("duplicate levels".into()));
    }
    if let Some(l) = levels.iter().find(|l| l.m == 0) {
        return Err(ExperimentError::Invalid(format!("level {l} has no time steps")));
    }
    let finest = Level::new(
        levels.iter().map(|l| l.n).max().expect("non-empty"),
        levels.iter().map(|l| l.m).max().expect("non-empty"),
    );
    for l in levels {
        if !finest.n.is_multiple_of(l.n) || !finest.m.is_multiple_of(l.m) {
            return Err(ExperimentError::NotNested(format!(
                "level {l} does not divide the finest level {finest}"
            )));
        }
    }
    Ok(finest)
}

/// Groups levels into sweeps: equal `m` with at least three `N` (h-sweep),
/// equal `N` with at least three `m` (τ-sweep), otherwise a diagonal where
/// `N` and `m` increase together.
fn detect_sweeps(levels: &[Level]) -> Result<Vec<(SweepAxis, Vec<Level>)>, ExperimentError> {
    let mut sweeps = Vec::new();
    let ms: BTreeSet<usize> = levels.iter().map(|l| l.m).collect();
    for m in ms {
        let mut group: Vec<Level> = levels.iter().copied().filter(|l| l.m == m).collect();
        if group.len() >= 3 {
            group.sort();
            sweeps.push((SweepAxis::H, group));
        }
    }
    let ns: BTreeSet<usize> = levels.iter().map(|l| l.n).collect();
    for n in ns {
        let mut group: Vec<Level> = levels.iter().copied().filter(|l| l.n == n).collect();
        if group.len() >= 3 {
            group.sort();
            sweeps.push((SweepAxis::Tau, group));
        }
    }
    if sweeps.is_empty() {
        let mut sorted = levels.to_vec();
        sorted.sort();
        if sorted.windows(2).all(|w| w[1].n > w[0].n && w[1].m > w[0].m) {
            sweeps.push((SweepAxis::Diagonal, sorted));
        }
    }
    if sweeps.is_empty() {
        return Err(ExperimentError::Invalid(
            "levels form no sweep of at least 3 points (fixed m, fixed N, or joint refinement)".into(),
        ));
    }
    Ok(sweeps)
}

/// Reference for one replica, built on `path` (the finest partition).
fn replica_reference(
    spec: &ProblemSpec,
    cfg: &StudyConfig,
    finest: Level,
    path: &WienerPath,
) -> Result<Box<dyn Reference>, ExperimentError> {
    match &cfg.reference {
        ReferenceChoice::Oracle { b } => Ok(Box::new(OracleReference::new(*b, path)?)),
        ReferenceChoice::Fine { n, m, cache } => {
            let fine_grid = GridSpec::new(spec.dim(), *n)?;
            let keep = GridSpec::new(spec.dim(), finest.n)?;
            let stride = m / finest.m;
            let fine_cfg = SchemeConfig::implicit(*m, spec.horizon()).with_solver_tol(cfg.solver_tol);
            let compute = || -> Result<Trajectory, ExperimentError> {
                let mut states = Vec::with_capacity(finest.m + 1);
                let summary = run_with(spec, fine_grid, &fine_cfg, path, |i, u| {
                    if i % stride == 0 {
                        states.push(u.subsample(&keep)?);
                    }
                    Ok(())
                })?;
                if let Some(at) = summary.diverged {
                    return Err(ExperimentError::Numerical(format!("reference run diverged at step {at}")));
                }
                Ok(Trajectory { summary, states })
            };
            let traj = match (cache, spec.fingerprint()) {
                (Some(root), Some(fp)) => {
                    let tag = format!("_keep{}_every{stride}", finest.n);
                    cached_trajectory(&root.join(cache_key(fp, path.seed(), &fine_grid, *m, &tag)), compute)?
                }
                _ => compute()?,
            };
            Ok(Box::new(TrajectoryReference::from_decimated(traj.states, stride, *m)?))
        }
    }
}

fn run_level(
    spec: &ProblemSpec,
    cfg: &StudyConfig,
    level: Level,
    certificate: Option<Certificate>,
    path: &WienerPath,
    reference: &dyn Reference,
    replica: usize,
) -> Result<(ErrorReport, RunSummary), ExperimentError> {
    let grid = GridSpec::new(spec.dim(), level.n)?;
    let scheme = SchemeConfig {
        q: cfg.q,
        solver_tol: cfg.solver_tol,
        ..SchemeConfig::new(cfg.kind, level.m, spec.horizon())
    };
    let coarse = path.coarsen_to(level.m)?;
    let mut acc = ErrorAccumulator::new(reference, grid, cfg.kind, level.m, spec.horizon(), cfg.r)?;
    let mut failure: Option<ExperimentError> = None;
    let result = run_with_certificate(spec, grid, &scheme, &coarse, certificate, |i, u: &GridFn| {
        acc.observe(i, u).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            SchemeError::Invalid(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = result?;
    let report = acc.finish(&summary, replica);
    Ok((report, summary))
}

/// Monte Carlo strong-error study. Every replica samples one path on the
/// finest partition; coarser levels use exact coarsenings of it, and the
/// reference is built from the same path.
pub fn convergence_study(spec: &ProblemSpec, cfg: &StudyConfig) -> Result<StudyResult, ExperimentError> {
    if cfg.replicas == 0 {
        return Err(ExperimentError::Invalid("at least one replica is required".into()));
    }
    let finest = check_levels(&cfg.levels)?;
    let sweeps = detect_sweeps(&cfg.levels)?;
    let fine_steps = match &cfg.reference {
        ReferenceChoice::Oracle { .. } => {
            if spec.dim() != 1 {
                return Err(ExperimentError::Invalid("the closed-form reference is one-dimensional".into()));
            }
            finest.m
        }
        ReferenceChoice::Fine { n, m, .. } => {
            if n % finest.n != 0 || m % finest.m != 0 || *n < 4 * finest.n || *m < 4 * finest.m {
                return Err(ExperimentError::NotNested(format!(
                    "reference {n}:{m} must be a multiple of, and at least 4x, the finest level {finest}"
                )));
            }
            *m
        }
    };

    let certificates: Vec<Option<Certificate>> = cfg
        .levels
        .iter()
        .map(|l| -> Result<Option<Certificate>, ExperimentError> {
            if cfg.kind != SchemeKind::Explicit {
                return Ok(None);
            }
            let grid = GridSpec::new(spec.dim(), l.n)?;
            let scheme = SchemeConfig {
                q: cfg.q,
                ..SchemeConfig::explicit(l.m, spec.horizon())
            };
            Ok(Some(certify_explicit(spec, &grid, &scheme)?))
        })
        .collect::<Result<_, _>>()?;

    let per_replica: Vec<Vec<(ErrorReport, RunSummary)>> = (0..cfg.replicas)
        .into_par_iter()
        .map(|replica| {
            let seed = replica_seed(cfg.seed, replica as u64);
            let path = WienerPath::sample(seed, spec.noise_dim(), fine_steps, spec.horizon())?;
            let reference = replica_reference(spec, cfg, finest, &path)?;
            cfg.levels
                .par_iter()
                .zip(certificates.par_iter())
                .map(|(level, cert)| run_level(spec, cfg, *level, cert.clone(), &path, reference.as_ref(), replica))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let mut records = Vec::with_capacity(cfg.levels.len() * cfg.replicas);
    let mut levels = Vec::with_capacity(cfg.levels.len());
    for (li, level) in cfg.levels.iter().enumerate() {
        let certified = certificates[li].as_ref().is_none_or(|c| c.certified);
        let mut sups = Vec::with_capacity(cfg.replicas);
        let mut ints = Vec::with_capacity(cfg.replicas);
        let mut diverged = 0;
        for (replica, runs) in per_replica.iter().enumerate() {
            let (report, summary) = &runs[li];
            if let Some(step) = summary.diverged {
                if certified {
                    return Err(ExperimentError::StabilityFalsified {
                        n: level.n,
                        m: level.m,
                        replica,
                        step,
                    });
                }
                diverged += 1;
            }
            sups.push(report.sup_h_error);
            ints.push(report.int_v_error_sq.sqrt());
            records.push(report.clone());
        }
        let (msq, msq_se) = mean_of_squares(&sups);
        let rms_sup = msq.sqrt();
        levels.push(LevelSummary {
            n: level.n,
            m: level.m,
            h: 1.0 / level.n as f64,
            tau: spec.horizon() / level.m as f64,
            rms_sup_h_error: rms_sup,
            rms_sup_h_error_se: if rms_sup > 0.0 { msq_se / (2.0 * rms_sup) } else { 0.0 },
            rms_int_v_error: mean_of_squares(&ints).0.sqrt(),
            diverged_replicas: diverged,
            certificate: certificates[li].clone(),
            excluded: !certified || diverged > 0,
        });
    }

    let sweeps = sweeps
        .into_iter()
        .map(|(axis, members)| {
            let mut points = Vec::new();
            let mut excluded = Vec::new();
            for level in &members {
                let summary = levels
                    .iter()
                    .find(|s| s.n == level.n && s.m == level.m)
                    .expect("level summarized");
                if summary.excluded {
                    excluded.push(*level);
                    continue;
                }
                let param = match axis {
                    SweepAxis::H | SweepAxis::Diagonal => summary.h,
                    SweepAxis::Tau => summary.tau,
                };
                points.push((param, summary.rms_sup_h_error));
            }
            let (fit, note) = match fit_rate(&points) {
                Ok(fit) => (Some(fit), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Sweep {
                axis,
                levels: members,
                excluded,
                fit,
                note,
            }
        })
        .collect();

    Ok(StudyResult {
        kind: cfg.kind,
        seed: cfg.seed,
        replicas: cfg.replicas,
        r: cfg.r,
        reference: cfg.reference.clone(),
        problem: spec.fingerprint().map(str::to_string),
        levels,
        sweeps,
        records,
    })
}
