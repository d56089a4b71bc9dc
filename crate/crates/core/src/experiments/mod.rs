//! Error measurement against reference solutions, Monte Carlo convergence
//! studies and log-log rate fits.

mod output;
mod reference;
mod study;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{sobolev_norm_sq, GridError, GridFn, GridSpec};
use crate::model::ModelError;
use crate::noise::NoiseError;
use crate::schemes::{RunSummary, SchemeError, SchemeKind, Trajectory};

pub use output::{write_study, STUDY_SCHEMA_VERSION};
pub use reference::{
    cache_key, cached_trajectory, exact_mode_solution, reference_solution, OracleReference, Reference,
    TrajectoryReference,
};
pub use study::{
    convergence_study, Level, LevelSummary, ReferenceChoice, StudyConfig, StudyResult, Sweep, SweepAxis,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("levels are not nested: {0}")]
    NotNested(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("stability certificate falsified: replica {replica} diverged at step {step} on certified level N = {n}, m = {m}")]
    StabilityFalsified {
        n: usize,
        m: usize,
        replica: usize,
        step: usize,
    },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("output: {0}")]
    Output(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Strong errors of one run: `sup_H_error = max_i |e_i|_{h,r}` and
/// `int_V_error_sq = Σ_i τ |e_i|²_{h,r+1}` with `e_i = R_h u(t_i) - u_i`.
/// The integral sums `i = 1..m` for the implicit scheme and `i = 0..m-1`
/// for the explicit one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub tau: f64,
    pub seed: u64,
    pub replica: usize,
    pub r: usize,
    #[serde(rename = "sup_H_error")]
    pub sup_h_error: f64,
    #[serde(rename = "int_V_error_sq")]
    pub int_v_error_sq: f64,
    pub diverged: bool,
}

/// Accumulates an [`ErrorReport`] state by state, so that runs need not
/// keep their trajectories.
pub struct ErrorAccumulator<'a> {
    reference: &'a dyn Reference,
    grid: GridSpec,
    kind: SchemeKind,
    m: usize,
    tau: f64,
    r: usize,
    sup: f64,
    int_sum: f64,
    seen: usize,
}

impl<'a> ErrorAccumulator<'a> {
    pub fn new(
        reference: &'a dyn Reference,
        grid: GridSpec,
        kind: SchemeKind,
        m: usize,
        horizon: f64,
        r: usize,
    ) -> Result<Self, ExperimentError> {
        if r + 1 > crate::grid::MAX_ORDER {
            return Err(ExperimentError::Invalid(format!(
                "norm order r = {r} needs |·|_(h,{}) which is not supported",
                r + 1
            )));
        }
        Ok(Self {
            reference,
            grid,
            kind,
            m,
            tau: if m == 0 { 0.0 } else { horizon / m as f64 },
            r,
            sup: 0.0,
            int_sum: 0.0,
            seen: 0,
        })
    }

    /// Records the state at `t_i`; states must arrive in order.
    pub fn observe(&mut self, i: usize, u: &GridFn) -> Result<(), ExperimentError> {
        if i != self.seen {
            return Err(ExperimentError::Invalid(format!("state {i} arrived out of order")));
        }
        self.seen += 1;
        let e = self.reference.at(i, self.m, &self.grid)?.checked_sub(u)?;
        self.sup = self.sup.max(sobolev_norm_sq(&e, self.r)?.sqrt());
        let in_range = match self.kind {
            SchemeKind::Implicit => i >= 1,
            SchemeKind::Explicit => i < self.m,
        };
        if in_range {
            self.int_sum += self.tau * sobolev_norm_sq(&e, self.r + 1)?;
        }
        Ok(())
    }

    pub fn finish(self, summary: &RunSummary, replica: usize) -> ErrorReport {
        let diverged = summary.diverged.is_some();
        ErrorReport {
            n: self.grid.n(),
            m: self.m,
            h: self.grid.h(),
            tau: self.tau,
            seed: summary.seed,
            replica,
            r: self.r,
            sup_h_error: if diverged { f64::INFINITY } else { self.sup },
            int_v_error_sq: if diverged { f64::INFINITY } else { self.int_sum },
            diverged,
        }
    }
}

/// Both error norms of a stored trajectory against `reference`.
pub fn error_norms(reference: &dyn Reference, traj: &Trajectory, r: usize) -> Result<ErrorReport, ExperimentError> {
    let cfg = &traj.summary.config;
    let mut acc = ErrorAccumulator::new(reference, traj.grid(), cfg.kind, cfg.m, cfg.horizon, r)?;
    for (i, u) in traj.states.iter().enumerate() {
        acc.observe(i, u)?;
    }
    Ok(acc.finish(&traj.summary, 0))
}

/// Least-squares line through `(ln param, ln error)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual in log space.
    pub residual: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, ExperimentError> {
    if points.len() < 3 {
        return Err(ExperimentError::Invalid(format!(
            "a rate fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if let Some(&(p, e)) = points.iter().find(|(p, e)| !(*p > 0.0 && *e > 0.0 && p.is_finite() && e.is_finite())) {
        return Err(ExperimentError::Invalid(format!(
            "rate fit needs positive finite values, got ({p}, {e})"
        )));
    }
    if points.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(ExperimentError::Invalid(
            "resolution parameters must be strictly decreasing".into(),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(RateFit {
        points: points.to_vec(),
        slope,
        intercept,
        residual,
    })
}

/// Root mean square with the squares summed in sorted order, so the result
/// does not depend on the order of `values`.
pub fn rms(values: &[f64]) -> f64 {
    mean_of_squares(values).0.sqrt()
}

/// Mean of squares and its standard error, summed in sorted order.
pub(crate) fn mean_of_squares(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    sq.sort_by(f64::total_cmp);
    let n = sq.len() as f64;
    let mean = sq.iter().sum::<f64>() / n;
    if sq.len() < 2 {
        return (mean, f64::NAN);
    }
    let mut dev: Vec<f64> = sq.iter().map(|s| (s - mean) * (s - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let var = dev.iter().sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests;
