//! Explicit and implicit Euler stepping on the finite-difference spaces.
//!
//! With `τ = T/m`, `t_i = iτ` and `ΔW_i = W(t_{i+1}) - W(t_i)`:
//!
//! ```text
//! explicit: u_{i+1} = u_i + τ (L_h(t_i) u_i + F_h(t_i, u_i))
//!                         + Σ_k (M_{k,h}(t_i) u_i + g_k(t_i)) ΔW^k_i
//! implicit: u_{i+1} - τ (L_h(t_{i+1}) u_{i+1} + F_h(t_{i+1}, u_{i+1}))
//!                   = u_i + Σ_k (M_{k,h}(t_i) u_i + g_k(t_i)) ΔW^k_i
//! ```
//!
//! The implicit equation is solved by a Krylov method on `I - τ L_h`
//! (conjugate gradients when that matrix is symmetric, BiCGSTAB otherwise),
//! wrapped in a Picard iteration when `F` is present.

mod dump;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridFn, GridSpec};
use crate::krylov::{bicgstab, conjugate_gradient, KrylovError, KrylovOptions};
use crate::model::constants::{certify_parabolicity, estimate_operator_norms, monotonicity_constant};
use crate::model::operators::{reaction_into, sample_field, sample_field_averaged};
use crate::model::{
    apply_fh, apply_lh, apply_mkh, assemble_lh, assemble_mkh, ModelError, ProblemSpec, StabilityBudget,
};
use crate::noise::{NoiseError, WienerPath};
use crate::sparse::{LinearMap, SparseOperator};

pub use dump::{read_trajectory, write_trajectory, TrajectoryManifest, TRAJECTORY_SCHEMA_VERSION};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-10;
/// Cap on Picard sweeps per implicit step.
pub const PICARD_MAX_ITER: usize = 100;
/// A run is flagged divergent once `|u_i|_{h,0} > DIVERGENCE_FACTOR (1 + |u_0|_{h,0})`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
/// Relative tolerance for detecting a symmetric system matrix.
const SYMMETRY_TOL: f64 = 1e-14;
/// Seed of the random part of the parabolicity certificate.
const CERTIFICATE_SEED: u64 = 0xC3A7_1F1E;
/// Number of evaluation times sampled when certifying time-dependent problems.
const CERTIFICATE_TIMES: usize = 9;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("invalid scheme configuration: {0}")]
    Invalid(String),
    #[error("time step {tau} violates the implicit gate tau < 1/L = {limit}")]
    StepTooLarge { tau: f64, limit: f64 },
    #[error("linear solver failed at step {step}: {source}")]
    Solver {
        step: usize,
        #[source]
        source: KrylovError,
    },
    #[error("Picard iteration did not converge at step {step} ({} sweeps)", history.len())]
    Picard { step: usize, history: Vec<f64> },
    #[error("non-finite right-hand side at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("trajectory file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Implicit,
    Explicit,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::Implicit => "implicit",
            SchemeKind::Explicit => "explicit",
        })
    }
}

/// How the free terms `f` and `g_k` are discretized in time: evaluation at
/// the step's time level, or the average over `[t_i, t_{i+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForcingMode {
    #[default]
    Point,
    Averaged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub m: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub solver_tol: f64,
    /// `None` means `10 N^d`.
    #[serde(default)]
    pub solver_max_iter: Option<usize>,
    /// Explicit stability margin; `None` means `0.9 λ`.
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub forcing_mode: ForcingMode,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, m: usize, horizon: f64) -> Self {
        Self {
            kind,
            m,
            horizon,
            solver_tol: DEFAULT_SOLVER_TOL,
            solver_max_iter: None,
            q: None,
            forcing_mode: ForcingMode::Point,
        }
    }

    pub fn implicit(m: usize, horizon: f64) -> Self {
        Self::new(SchemeKind::Implicit, m, horizon)
    }

    pub fn explicit(m: usize, horizon: f64) -> Self {
        Self::new(SchemeKind::Explicit, m, horizon)
    }

    pub fn with_q(mut self, q: f64) -> Self {
        self.q = Some(q);
        self
    }

    pub fn with_solver_tol(mut self, tol: f64) -> Self {
        self.solver_tol = tol;
        self
    }

    pub fn with_forcing_mode(mut self, mode: ForcingMode) -> Self {
        self.forcing_mode = mode;
        self
    }

    /// `τ = T/m` (zero when `m = 0`).
    pub fn tau(&self) -> f64 {
        if self.m == 0 {
            0.0
        } else {
            self.horizon / self.m as f64
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.m {
            self.horizon
        } else {
            i as f64 * self.tau()
        }
    }

    pub fn max_iter(&self, grid: &GridSpec) -> usize {
        self.solver_max_iter.unwrap_or(10 * grid.len())
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SchemeError::Invalid(format!("T must be positive, got {}", self.horizon)));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol < 1.0) {
            return Err(SchemeError::Invalid(format!(
                "solver_tol must lie in (0, 1), got {}",
                self.solver_tol
            )));
        }
        if self.solver_max_iter == Some(0) {
            return Err(SchemeError::Invalid("solver_max_iter must be positive".into()));
        }
        if let Some(q) = self.q {
            if !(q >= 0.0 && q.is_finite()) {
                return Err(SchemeError::Invalid(format!("q must be non-negative, got {q}")));
            }
        }
        Ok(())
    }
}

/// `q - [L1 κ² τ/h² + 2κ √(L1 L2 τ)/h]`.
pub fn stability_margin(budget: &StabilityBudget, tau: f64, h: f64) -> f64 {
    let StabilityBudget { l1, l2, kappa, q, .. } = *budget;
    q - (l1 * kappa * kappa * tau / (h * h) + 2.0 * kappa * (l1 * l2 * tau).sqrt() / h)
}

/// Stability certificate of an explicit run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub budget: StabilityBudget,
    pub margin: f64,
    pub certified: bool,
}

fn evaluation_times(spec: &ProblemSpec, cfg: &SchemeConfig) -> Vec<f64> {
    if spec.is_time_independent() || cfg.m == 0 {
        return vec![0.0];
    }
    let count = CERTIFICATE_TIMES.min(cfg.m);
    let mut times: Vec<f64> = (0..count).map(|j| cfg.time(j * (cfg.m - 1) / (count - 1).max(1))).collect();
    times.dedup();
    times
}

/// Budget and margin for running `cfg` explicitly on `grid`. Constants are
/// taken at a sample of the evaluation times `t_i` (all of them coincide for
/// time-independent coefficients): the largest operator norms and the
/// smallest `λ` over the sample.
pub fn certify_explicit(spec: &ProblemSpec, grid: &GridSpec, cfg: &SchemeConfig) -> Result<Certificate, SchemeError> {
    let times = evaluation_times(spec, cfg);
    let lambda = certify_parabolicity(spec, grid, &times, CERTIFICATE_SEED)?.lambda;
    let (mut l1, mut l2) = (0.0_f64, 0.0_f64);
    for &t in &times {
        let norms = estimate_operator_norms(spec, grid, t)?;
        l1 = l1.max(norms.l1);
        l2 = l2.max(norms.l2);
    }
    let q = cfg.q.unwrap_or(crate::model::constants::DEFAULT_MARGIN_FRACTION * lambda);
    let budget = StabilityBudget::new(l1, l2, crate::grid::inverse_constant(grid.dim()), lambda, q)?;
    let margin = stability_margin(&budget, cfg.tau(), grid.h());
    Ok(Certificate {
        budget,
        margin,
        certified: margin >= 0.0,
    })
}

/// Diagnostics of one implicit step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Krylov iterations summed over Picard sweeps.
    pub krylov_iterations: usize,
    pub picard_iterations: usize,
    /// `|w^{j+1} - w^j|_{h,0}` for successive Picard iterates.
    pub picard_increments: Vec<f64>,
    /// `|D(w) - rhs|_{h,0}` of the returned state, recomputed after the solve.
    pub residual: f64,
    /// `|rhs|_{h,0}`.
    pub rhs_norm: f64,
}

impl StepReport {
    /// Largest observed ratio of successive Picard increments.
    pub fn contraction(&self) -> Option<f64> {
        self.picard_increments
            .windows(2)
            .filter(|w| w[0] > 0.0)
            .map(|w| w[1] / w[0])
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }
}

fn l2_norm(grid: &GridSpec, v: &[f64]) -> f64 {
    crate::grid::l2_norm_sq(grid, v).sqrt()
}

/// Drift-side operators at one time level: `L_h`, `I - τ L_h` and `f`.
struct DriftFrame {
    lh: SparseOperator,
    system: SparseOperator,
    symmetric: bool,
    forcing: Option<Vec<f64>>,
}

impl DriftFrame {
    fn new(spec: &ProblemSpec, grid: &GridSpec, t: f64, tau: f64, forcing: Option<Vec<f64>>) -> Result<Self, SchemeError> {
        let lh = assemble_lh(spec, grid, t)?;
        let system = lh.shifted_identity(-tau);
        let symmetric = system.is_symmetric(SYMMETRY_TOL);
        Ok(Self {
            lh,
            system,
            symmetric,
            forcing,
        })
    }
}

/// Diffusion-side operators at one time level: `M_{k,h}` and `g_k`.
struct NoiseFrame {
    mk: Vec<SparseOperator>,
    g: Vec<Option<Vec<f64>>>,
}

impl NoiseFrame {
    fn new(spec: &ProblemSpec, grid: &GridSpec, t: f64, g: Vec<Option<Vec<f64>>>) -> Result<Self, SchemeError> {
        let mk = (0..spec.noise_dim())
            .map(|k| assemble_mkh(spec, k, grid, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { mk, g })
    }

    /// `out += Σ_k (M_k u + g_k) ΔW^k`.
    fn add_stochastic(&self, u: &[f64], dw: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; u.len()];
        for (k, &w) in dw.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            if !self.mk[k].is_zero() {
                self.mk[k].apply(u, &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += x * w);
            }
            if let Some(g) = &self.g[k] {
                out.iter_mut().zip(g).for_each(|(o, x)| *o += x * w);
            }
        }
    }
}

fn solve_linear(
    frame: &DriftFrame,
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<crate::krylov::KrylovOutcome, KrylovError> {
    if frame.symmetric {
        conjugate_gradient(&frame.system, b, x, opts)
    } else {
        bicgstab(&frame.system, b, x, opts)
    }
}

/// `D(w) - rhs` with `D(w) = w - τ (L_h w + F(t, w))`; the forcing `f` is
/// part of `rhs`.
fn residual_into(
    spec: &ProblemSpec,
    grid: &GridSpec,
    frame: &DriftFrame,
    t: f64,
    tau: f64,
    w: &[f64],
    rhs: &[f64],
    out: &mut [f64],
) {
    frame.system.apply(w, out);
    if spec.nonlinearity().is_some() {
        let mut react = vec![0.0; w.len()];
        reaction_into(spec, t, None, grid, w, &mut react);
        out.iter_mut().zip(&react).for_each(|(o, r)| *o -= tau * r);
    }
    out.iter_mut().zip(rhs).for_each(|(o, r)| *o -= r);
}

/// Solves `D(w) = rhs` where `rhs` already includes `τ f(t)`. `w` holds the
/// initial guess on entry.
#[allow(clippy::too_many_arguments)]
fn implicit_solve(
    spec: &ProblemSpec,
    grid: &GridSpec,
    frame: &DriftFrame,
    t: f64,
    tau: f64,
    rhs: &[f64],
    w: &mut Vec<f64>,
    tol: f64,
    max_iter: usize,
    step: usize,
) -> Result<StepReport, SchemeError> {
    let n = rhs.len();
    let rhs_norm = l2_norm(grid, rhs);
    // Absolute target; falls back to `tol` itself when the data vanish.
    let target = if rhs_norm > 0.0 { tol * rhs_norm } else { tol };
    let mut report = StepReport {
        rhs_norm,
        ..StepReport::default()
    };
    let mut resid = vec![0.0; n];

    let Some(_) = spec.nonlinearity() else {
        let b_norm = rhs_norm;
        let rel = if b_norm > 0.0 { target / b_norm } else { tol };
        let opts = KrylovOptions {
            rel_tol: rel,
            max_iter,
        };
        let outcome = solve_linear(frame, rhs, w, opts).map_err(|source| SchemeError::Solver { step, source })?;
        report.krylov_iterations = outcome.iterations;
        residual_into(spec, grid, frame, t, tau, w, rhs, &mut resid);
        report.residual = l2_norm(grid, &resid);
        return Ok(report);
    };

    // Picard: (I - τL) w^{j+1} = rhs + τ F(t, w^j).
    let mut b = vec![0.0; n];
    let mut react = vec![0.0; n];
    for sweep in 1..=PICARD_MAX_ITER {
        reaction_into(spec, t, None, grid, w, &mut react);
        b.iter_mut()
            .zip(rhs.iter().zip(&react))
            .for_each(|(bi, (r, f))| *bi = r + tau * f);
        let b_norm = l2_norm(grid, &b);
        let rel = if b_norm > 0.0 { 0.1 * target / b_norm } else { tol };
        let previous = w.clone();
        let outcome = solve_linear(frame, &b, w, KrylovOptions { rel_tol: rel, max_iter })
            .map_err(|source| SchemeError::Solver { step, source })?;
        report.krylov_iterations += outcome.iterations;
        report.picard_iterations = sweep;
        let diff: Vec<f64> = w.iter().zip(&previous).map(|(a, p)| a - p).collect();
        report.picard_increments.push(l2_norm(grid, &diff));
        residual_into(spec, grid, frame, t, tau, w, rhs, &mut resid);
        report.residual = l2_norm(grid, &resid);
        if !report.residual.is_finite() {
            return Err(SchemeError::NonFinite { step });
        }
        if report.residual <= target {
            return Ok(report);
        }
    }
    Err(SchemeError::Picard {
        step,
        history: report.picard_increments,
    })
}

/// One explicit step, composed from the definitional operator routes.
/// Non-finite output is returned as is; runs flag it as divergence.
pub fn explicit_step(spec: &ProblemSpec, t: f64, u: &GridFn, dw: &[f64], tau: f64) -> Result<GridFn, SchemeError> {
    check_noise_len(spec, dw)?;
    let mut out = u.clone();
    out.axpy(tau, &apply_lh(spec, t, u)?)?;
    if spec.has_reaction() {
        out.axpy(tau, &apply_fh(spec, t, u)?)?;
    }
    add_noise_definitional(spec, t, u, dw, &mut out)?;
    Ok(out)
}

fn add_noise_definitional(spec: &ProblemSpec, t: f64, u: &GridFn, dw: &[f64], out: &mut GridFn) -> Result<(), SchemeError> {
    for (k, &w) in dw.iter().enumerate() {
        out.axpy(w, &apply_mkh(spec, k, t, u)?)?;
        if let Some(g) = spec.noise_forcing(k) {
            let gk = GridFn::new(*u.spec(), sample_field(g, t, u.spec()))?;
            out.axpy(w, &gk)?;
        }
    }
    Ok(())
}

fn check_noise_len(spec: &ProblemSpec, dw: &[f64]) -> Result<(), SchemeError> {
    if dw.len() != spec.noise_dim() {
        return Err(SchemeError::Invalid(format!(
            "expected {} noise increments, got {}",
            spec.noise_dim(),
            dw.len()
        )));
    }
    Ok(())
}

/// Result of [`implicit_step`].
#[derive(Debug, Clone)]
pub struct ImplicitStep {
    pub state: GridFn,
    pub report: StepReport,
}

/// One implicit step from `u` at `t_prev` to `t_next`. The free term `f` is
/// evaluated at `t_next`; `M_{k,h}` and `g_k` at `t_prev`.
pub fn implicit_step(
    spec: &ProblemSpec,
    t_next: f64,
    t_prev: f64,
    u: &GridFn,
    dw: &[f64],
    tau: f64,
    solver_tol: f64,
) -> Result<ImplicitStep, SchemeError> {
    check_noise_len(spec, dw)?;
    let grid = *u.spec();
    let forcing = spec.forcing().map(|f| sample_field(f, t_next, &grid));
    let frame = DriftFrame::new(spec, &grid, t_next, tau, forcing)?;
    let mut rhs = u.clone();
    add_noise_definitional(spec, t_prev, u, dw, &mut rhs)?;
    if !rhs.is_finite() {
        return Err(SchemeError::NonFinite { step: 0 });
    }
    let mut rhs = rhs.into_values();
    if let Some(f) = &frame.forcing {
        rhs.iter_mut().zip(f).for_each(|(r, fi)| *r += tau * fi);
    }
    let mut w = rhs.clone();
    let report = implicit_solve(spec, &grid, &frame, t_next, tau, &rhs, &mut w, solver_tol, 10 * grid.len(), 0)?;
    Ok(ImplicitStep {
        state: GridFn::new(grid, w)?,
        report,
    })
}

/// Sequential time stepper with operators cached across steps when the
/// coefficients do not depend on time.
pub struct Stepper<'a> {
    spec: &'a ProblemSpec,
    grid: GridSpec,
    cfg: SchemeConfig,
    tau: f64,
    max_iter: usize,
    drift: Option<DriftFrame>,
    noise: Option<NoiseFrame>,
}

impl<'a> Stepper<'a> {
    /// Validates the configuration; implicit steppers also enforce
    /// `τ < 1/L_model`.
    pub fn new(spec: &'a ProblemSpec, grid: GridSpec, cfg: SchemeConfig) -> Result<Self, SchemeError> {
        cfg.validate()?;
        if grid.dim() != spec.dim() {
            return Err(SchemeError::Invalid(format!(
                "grid dimension {} does not match problem dimension {}",
                grid.dim(),
                spec.dim()
            )));
        }
        if (cfg.horizon - spec.horizon()).abs() > 1e-12 * spec.horizon() {
            return Err(SchemeError::Invalid(format!(
                "scheme horizon {} differs from problem horizon {}",
                cfg.horizon,
                spec.horizon()
            )));
        }
        let tau = cfg.tau();
        if cfg.kind == SchemeKind::Implicit && cfg.m > 0 {
            let limit = implicit_step_limit(spec, &grid, &cfg);
            if !(tau < limit) {
                return Err(SchemeError::StepTooLarge { tau, limit });
            }
        }
        let max_iter = cfg.max_iter(&grid);
        let mut stepper = Self {
            spec,
            grid,
            cfg,
            tau,
            max_iter,
            drift: None,
            noise: None,
        };
        if spec.is_time_independent() && spec.free_terms_time_independent() && stepper.cfg.m > 0 {
            stepper.drift = Some(stepper.drift_frame(0)?);
            stepper.noise = Some(stepper.noise_frame(0)?);
        }
        Ok(stepper)
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Drift frame for the step `i → i+1`.
    fn drift_frame(&self, i: usize) -> Result<DriftFrame, SchemeError> {
        let t = match self.cfg.kind {
            SchemeKind::Implicit => self.cfg.time(i + 1),
            SchemeKind::Explicit => self.cfg.time(i),
        };
        let forcing = self.spec.forcing().map(|f| match self.cfg.forcing_mode {
            ForcingMode::Point => sample_field(f, t, &self.grid),
            ForcingMode::Averaged => sample_field_averaged(f, self.cfg.time(i), self.cfg.time(i + 1), &self.grid),
        });
        DriftFrame::new(self.spec, &self.grid, t, self.tau, forcing)
    }

    fn noise_frame(&self, i: usize) -> Result<NoiseFrame, SchemeError> {
        let t = self.cfg.time(i);
        let g = (0..self.spec.noise_dim())
            .map(|k| {
                self.spec.noise_forcing(k).map(|g| match self.cfg.forcing_mode {
                    ForcingMode::Point => sample_field(g, t, &self.grid),
                    ForcingMode::Averaged => {
                        sample_field_averaged(g, self.cfg.time(i), self.cfg.time(i + 1), &self.grid)
                    }
                })
            })
            .collect();
        NoiseFrame::new(self.spec, &self.grid, t, g)
    }

    /// Advances `u` from `t_i` to `t_{i+1}` with increments `dw`.
    pub fn step(&self, i: usize, u: &[f64], dw: &[f64]) -> Result<(Vec<f64>, StepReport), SchemeError> {
        check_noise_len(self.spec, dw)?;
        let owned_drift;
        let drift = match &self.drift {
            Some(d) => d,
            None => {
                owned_drift = self.drift_frame(i)?;
                &owned_drift
            }
        };
        let owned_noise;
        let noise = match &self.noise {
            Some(n) => n,
            None => {
                owned_noise = self.noise_frame(i)?;
                &owned_noise
            }
        };
        match self.cfg.kind {
            SchemeKind::Explicit => {
                let n = u.len();
                let mut out = u.to_vec();
                let mut tmp = vec![0.0; n];
                drift.lh.apply(u, &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += self.tau * x);
                if self.spec.has_reaction() {
                    reaction_into(
                        self.spec,
                        self.cfg.time(i),
                        drift.forcing.as_deref(),
                        &self.grid,
                        u,
                        &mut tmp,
                    );
                    out.iter_mut().zip(&tmp).for_each(|(o, x)| *o += self.tau * x);
                }
                noise.add_stochastic(u, dw, &mut out);
                Ok((out, StepReport::default()))
            }
            SchemeKind::Implicit => {
                let mut rhs = u.to_vec();
                noise.add_stochastic(u, dw, &mut rhs);
                if rhs.iter().any(|v| !v.is_finite()) {
                    return Err(SchemeError::NonFinite { step: i });
                }
                if let Some(f) = &drift.forcing {
                    rhs.iter_mut().zip(f).for_each(|(r, fi)| *r += self.tau * fi);
                }
                let mut w = u.to_vec();
                let report = implicit_solve(
                    self.spec,
                    &self.grid,
                    drift,
                    self.cfg.time(i + 1),
                    self.tau,
                    &rhs,
                    &mut w,
                    self.cfg.solver_tol,
                    self.max_iter,
                    i,
                )?;
                Ok((w, report))
            }
        }
    }
}

/// `1 / L_model`, the largest admissible implicit step (infinite when the
/// monotonicity majorant vanishes).
pub fn implicit_step_limit(spec: &ProblemSpec, grid: &GridSpec, cfg: &SchemeConfig) -> f64 {
    let times = evaluation_times(spec, cfg);
    let l = monotonicity_constant(spec, grid, &times);
    if l > 0.0 {
        1.0 / l
    } else {
        f64::INFINITY
    }
}

/// Everything a run records apart from the states themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub config: SchemeConfig,
    pub seed: u64,
    /// Index of the first state that failed the divergence test.
    pub diverged: Option<usize>,
    /// Explicit runs only.
    pub certificate: Option<Certificate>,
    /// Krylov iterations per implicit step.
    pub solver_iterations: Vec<usize>,
    /// Picard sweeps per implicit step (quasilinear problems).
    pub picard_iterations: Vec<usize>,
    /// Largest ratio of successive Picard increments over the run.
    pub picard_contraction: Option<f64>,
    /// Largest post-solve residual `|D(w) - rhs|_{h,0}` over the run.
    pub max_residual: f64,
    /// `|u_0|_{h,0}`.
    pub initial_norm: f64,
}

impl RunSummary {
    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.d, self.n).expect("validated at run time")
    }
}

/// A run with every state kept.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub summary: RunSummary,
    /// `u_0, u_1, ...`; ends before the divergent state if one occurred.
    pub states: Vec<GridFn>,
}

impl Trajectory {
    pub fn diverged(&self) -> Option<usize> {
        self.summary.diverged
    }

    pub fn grid(&self) -> GridSpec {
        self.summary.grid()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.summary.config.time(i)
    }
}

/// Runs `cfg` and hands every accepted state to `observe(i, u_i)` instead of
/// storing it. `path` must have exactly `m` increments.
pub fn run_with<F>(
    spec: &ProblemSpec,
    grid: GridSpec,
    cfg: &SchemeConfig,
    path: &WienerPath,
    observe: F,
) -> Result<RunSummary, SchemeError>
where
    F: FnMut(usize, &GridFn) -> Result<(), SchemeError>,
{
    cfg.validate()?;
    let certificate = match cfg.kind {
        SchemeKind::Explicit if cfg.m > 0 => Some(certify_explicit(spec, &grid, cfg)?),
        _ => None,
    };
    run_with_certificate(spec, grid, cfg, path, certificate, observe)
}

/// [`run_with`] with an explicit-scheme certificate computed by the caller
/// (studies certify each level once, not once per replica).
pub fn run_with_certificate<F>(
    spec: &ProblemSpec,
    grid: GridSpec,
    cfg: &SchemeConfig,
    path: &WienerPath,
    certificate: Option<Certificate>,
    mut observe: F,
) -> Result<RunSummary, SchemeError>
where
    F: FnMut(usize, &GridFn) -> Result<(), SchemeError>,
{
    cfg.validate()?;
    if cfg.m > 0 && (path.steps() != cfg.m || path.noise_dim() != spec.noise_dim()) {
        return Err(SchemeError::Invalid(format!(
            "path has {} steps of {} components; scheme needs {} of {}",
            path.steps(),
            path.noise_dim(),
            cfg.m,
            spec.noise_dim()
        )));
    }
    if let Some(c) = certificate.as_ref().filter(|c| !c.certified) {
        warn!(
            "explicit run on {grid} with m = {} is not certified (margin {:.3e})",
            cfg.m, c.margin
        );
    }
    let stepper = Stepper::new(spec, grid, cfg.clone())?;
    let u0 = crate::grid::restrict(|x| spec.initial_value(x), &grid)?;
    let initial_norm = l2_norm(&grid, u0.values());
    let bound = DIVERGENCE_FACTOR * (1.0 + initial_norm);
    let mut summary = RunSummary {
        d: grid.dim(),
        n: grid.n(),
        config: cfg.clone(),
        seed: path.seed(),
        diverged: None,
        certificate,
        solver_iterations: Vec::new(),
        picard_iterations: Vec::new(),
        picard_contraction: None,
        max_residual: 0.0,
        initial_norm,
    };
    observe(0, &u0)?;
    let mut u = u0.into_values();
    for i in 0..cfg.m {
        let (next, report) = match stepper.step(i, &u, path.increment(i)) {
            Ok(r) => r,
            Err(SchemeError::NonFinite { .. }) => {
                summary.diverged = Some(i + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        if cfg.kind == SchemeKind::Implicit {
            summary.solver_iterations.push(report.krylov_iterations);
            summary.max_residual = summary.max_residual.max(report.residual);
            if spec.nonlinearity().is_some() {
                summary.picard_iterations.push(report.picard_iterations);
                if let Some(rho) = report.contraction() {
                    summary.picard_contraction = Some(summary.picard_contraction.map_or(rho, |c| c.max(rho)));
                }
            }
        }
        let norm = l2_norm(&grid, &next);
        if !(norm <= bound) {
            summary.diverged = Some(i + 1);
            break;
        }
        u = next;
        observe(i + 1, &GridFn::new(grid, u.clone())?)?;
    }
    Ok(summary)
}

/// Runs `cfg` on `grid` driven by `path`, keeping every state.
pub fn run(spec: &ProblemSpec, grid: GridSpec, cfg: &SchemeConfig, path: &WienerPath) -> Result<Trajectory, SchemeError> {
    let mut states = Vec::with_capacity(cfg.m + 1);
    let summary = run_with(spec, grid, cfg, path, |_, u| {
        states.push(u.clone());
        Ok(())
    })?;
    Ok(Trajectory { summary, states })
}
