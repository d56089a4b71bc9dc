//! Problem definition for the divergence-form SPDE
//!
//! ```text
//! du = (L u + F(t, x, ∇u, u) + f) dt + Σ_k (M_k u + g_k) dW^k
//! L u   = Σ_{|α|≤1, |β|≤1} D^α (a^{αβ} D^β u)
//! M_k u = Σ_{|α|≤1} b^α_k D^α u
//! ```
//!
//! on the unit torus, together with its finite-difference operators
//! ([`operators`]), structural constants ([`constants`]) and the JSON
//! problem-file registry ([`config`]).
//!
//! Axis and noise indices are 0-based in this API; problem files use the
//! 1-based convention of the mathematical notation.

pub mod config;
pub mod constants;
pub mod operators;

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::GridError;
use crate::krylov::KrylovError;

pub use config::{CoefficientConfig, NonlinearityConfig, ProblemConfig};
pub use constants::{
    certify_parabolicity, check_parabolicity, estimate_constants, estimate_operator_norms,
    monotonicity_constant, OperatorNorms, Parabolicity, StabilityBudget,
};
pub use operators::{apply_fh, apply_lh, apply_mkh, assemble_lh, assemble_mkh};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("coefficient {name} is not finite ({value}) at t = {t}, x = {x:?}")]
    NonFinite {
        name: String,
        t: f64,
        x: Vec<f64>,
        value: f64,
    },
    #[error("noise index {k} out of range for {noise_dim} noise components")]
    NoiseIndex { k: usize, noise_dim: usize },
    #[error("problem has neither a nonlinearity nor a forcing term")]
    NoReaction,
    #[error("parabolicity fails: smallest eigenvalue {lambda} at t = {t}, x = {x:?}")]
    NotParabolic { lambda: f64, t: f64, x: Vec<f64> },
    #[error("stability margin q = {q} must satisfy 0 <= q < lambda = {lambda}")]
    BadMargin { q: f64, lambda: f64 },
    #[error("norm estimate for {which} did not converge in {iterations} iterations")]
    Estimation {
        which: String,
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("problem file: {0}")]
    Config(String),
    #[error(transparent)]
    Krylov(#[from] KrylovError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A multi-index of length at most one: the identity or a first derivative
/// along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiffIndex {
    Zero,
    Axis(usize),
}

impl DiffIndex {
    pub fn is_zero(&self) -> bool {
        matches!(self, DiffIndex::Zero)
    }
}

/// Declared time-Hölder regularity of a coefficient (metadata only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeHoelder {
    pub exponent: f64,
    pub constant: f64,
}

/// `mean + amplitude * sin(2π k·x + phase) * cos(omega * t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigField {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub amplitude: f64,
    pub wavenumbers: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub omega: f64,
}

impl TrigField {
    fn spatial(&self, x: &[f64]) -> f64 {
        let kx: f64 = self
            .wavenumbers
            .iter()
            .zip(x)
            .map(|(&k, &xi)| k as f64 * xi)
            .sum();
        (2.0 * PI * kx + self.phase).sin()
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        self.mean + self.amplitude * self.spatial(x) * (self.omega * t).cos()
    }

    fn time_average(&self, t0: f64, t1: f64, x: &[f64]) -> f64 {
        let avg_cos = if self.omega == 0.0 {
            1.0
        } else if t1 == t0 {
            (self.omega * t0).cos()
        } else {
            ((self.omega * t1).sin() - (self.omega * t0).sin()) / (self.omega * (t1 - t0))
        };
        self.mean + self.amplitude * self.spatial(x) * avg_cos
    }
}

pub type FieldFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
enum FieldSource {
    Constant(f64),
    Trig(TrigField),
    Custom(Arc<FieldFn>),
}

/// Real coefficient `c(t, x)` on `[0, T] × torus`.
#[derive(Clone)]
pub struct CoefficientField {
    source: FieldSource,
    time_hoelder: Option<TimeHoelder>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source {
            FieldSource::Constant(c) => write!(f, "Constant({c})"),
            FieldSource::Trig(t) => write!(f, "{t:?}"),
            FieldSource::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl CoefficientField {
    pub fn constant(c: f64) -> Self {
        Self {
            source: FieldSource::Constant(c),
            time_hoelder: None,
        }
    }

    pub fn trig(field: TrigField) -> Self {
        Self {
            source: FieldSource::Trig(field),
            time_hoelder: None,
        }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            source: FieldSource::Custom(Arc::new(f)),
            time_hoelder: None,
        }
    }

    pub fn with_time_hoelder(mut self, exponent: f64, constant: f64) -> Self {
        self.time_hoelder = Some(TimeHoelder { exponent, constant });
        self
    }

    pub fn time_hoelder(&self) -> Option<TimeHoelder> {
        self.time_hoelder
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        match &self.source {
            FieldSource::Constant(c) => *c,
            FieldSource::Trig(tf) => tf.value(t, x),
            FieldSource::Custom(f) => f(t, x),
        }
    }

    /// `(1/(t1 - t0)) ∫_{t0}^{t1} c(s, x) ds`. Closed form for the built-in
    /// fields; Simpson's rule for custom ones.
    pub fn time_average(&self, t0: f64, t1: f64, x: &[f64]) -> f64 {
        match &self.source {
            FieldSource::Constant(c) => *c,
            FieldSource::Trig(tf) => tf.time_average(t0, t1, x),
            FieldSource::Custom(f) => {
                if t1 == t0 {
                    f(t0, x)
                } else {
                    (f(t0, x) + 4.0 * f(0.5 * (t0 + t1), x) + f(t1, x)) / 6.0
                }
            }
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.source {
            FieldSource::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_time_independent(&self) -> bool {
        match &self.source {
            FieldSource::Constant(_) => true,
            FieldSource::Trig(tf) => tf.omega == 0.0 || tf.amplitude == 0.0,
            FieldSource::Custom(_) => false,
        }
    }
}

pub type NonlinearFn = dyn Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync;

/// Nonlinear reaction `F(t, x, p, r)` with declared Lipschitz bounds in the
/// gradient slot `p` and the value slot `r`.
#[derive(Clone)]
pub struct Nonlinearity {
    name: String,
    eval: Arc<NonlinearFn>,
    lipschitz_p: f64,
    lipschitz_r: f64,
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("name", &self.name)
            .field("lipschitz_p", &self.lipschitz_p)
            .field("lipschitz_r", &self.lipschitz_r)
            .finish()
    }
}

impl Nonlinearity {
    pub fn new<F>(name: &str, lipschitz_p: f64, lipschitz_r: f64, f: F) -> Result<Self, ModelError>
    where
        F: Fn(f64, &[f64], &[f64], f64) -> f64 + Send + Sync + 'static,
    {
        for (label, bound) in [("p", lipschitz_p), ("r", lipschitz_r)] {
            if !bound.is_finite() || bound < 0.0 {
                return Err(ModelError::Invalid(format!(
                    "nonlinearity {name}: Lipschitz bound in {label} must be finite and non-negative, got {bound}"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            eval: Arc::new(f),
            lipschitz_p,
            lipschitz_r,
        })
    }

    /// `F = sin(r)`.
    pub fn sine() -> Self {
        Self::new("sine", 0.0, 1.0, |_, _, _, r| r.sin()).expect("valid bounds")
    }

    /// `F = s * tanh(r / s)`.
    pub fn smooth_clip(scale: f64) -> Result<Self, ModelError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ModelError::Invalid(format!("smooth_clip scale must be positive, got {scale}")));
        }
        Self::new("smooth_clip", 0.0, 1.0, move |_, _, _, r| scale * (r / scale).tanh())
    }

    /// `F = c * r`.
    pub fn linear(c: f64) -> Result<Self, ModelError> {
        Self::new("linear", 0.0, c.abs(), move |_, _, _, r| c * r)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn lipschitz_p(&self) -> f64 {
        self.lipschitz_p
    }

    pub fn lipschitz_r(&self) -> f64 {
        self.lipschitz_r
    }

    pub fn depends_on_gradient(&self) -> bool {
        self.lipschitz_p > 0.0
    }

    pub fn eval(&self, t: f64, x: &[f64], p: &[f64], r: f64) -> f64 {
        (self.eval)(t, x, p, r)
    }
}

pub type InitialFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Debug, Clone)]
pub struct DriftTerm {
    pub alpha: DiffIndex,
    pub beta: DiffIndex,
    pub coefficient: CoefficientField,
}

#[derive(Debug, Clone)]
pub struct DiffusionTerm {
    pub alpha: DiffIndex,
    pub coefficient: CoefficientField,
}

/// Immutable SPDE description; build it with [`ProblemSpec::builder`].
#[derive(Clone)]
pub struct ProblemSpec {
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    drift: Vec<DriftTerm>,
    diffusion: Vec<Vec<DiffusionTerm>>,
    forcing: Option<CoefficientField>,
    noise_forcing: Vec<Option<CoefficientField>>,
    nonlinearity: Option<Nonlinearity>,
    initial: Arc<InitialFn>,
    fingerprint: Option<String>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("horizon", &self.horizon)
            .field("drift", &self.drift)
            .field("diffusion", &self.diffusion)
            .field("forcing", &self.forcing)
            .field("noise_forcing", &self.noise_forcing)
            .field("nonlinearity", &self.nonlinearity)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl ProblemSpec {
    pub fn builder(dim: usize, noise_dim: usize, horizon: f64) -> ProblemBuilder {
        ProblemBuilder {
            dim,
            noise_dim,
            horizon,
            drift: Vec::new(),
            diffusion: vec![Vec::new(); noise_dim],
            forcing: None,
            noise_forcing: vec![None; noise_dim],
            nonlinearity: None,
            initial: None,
            fingerprint: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn drift_terms(&self) -> &[DriftTerm] {
        &self.drift
    }

    pub fn diffusion_terms(&self, k: usize) -> Result<&[DiffusionTerm], ModelError> {
        self.diffusion
            .get(k)
            .map(|v| v.as_slice())
            .ok_or(ModelError::NoiseIndex {
                k,
                noise_dim: self.noise_dim,
            })
    }

    pub fn forcing(&self) -> Option<&CoefficientField> {
        self.forcing.as_ref()
    }

    pub fn noise_forcing(&self, k: usize) -> Option<&CoefficientField> {
        self.noise_forcing.get(k).and_then(|g| g.as_ref())
    }

    pub fn nonlinearity(&self) -> Option<&Nonlinearity> {
        self.nonlinearity.as_ref()
    }

    pub fn initial_value(&self, x: &[f64]) -> f64 {
        (self.initial)(x)
    }

    /// Stable identifier for caching; present for problems loaded from a
    /// problem file or explicitly labelled.
    pub fn fingerprint(&self) -> Option<&str> {
        self.fingerprint.as_deref()
    }

    pub fn has_reaction(&self) -> bool {
        self.forcing.is_some() || self.nonlinearity.is_some()
    }

    /// True if the drift does not depend on the solution beyond `L`.
    pub fn is_linear(&self) -> bool {
        self.nonlinearity.is_none()
    }

    pub fn is_noise_free(&self) -> bool {
        self.diffusion.iter().all(|terms| terms.is_empty()) && self.noise_forcing.iter().all(|g| g.is_none())
    }

    pub fn is_time_independent(&self) -> bool {
        self.drift.iter().all(|t| t.coefficient.is_time_independent())
            && self
                .diffusion
                .iter()
                .flatten()
                .all(|t| t.coefficient.is_time_independent())
    }

    /// True if `f` and every `g_k` are time independent (or absent).
    pub fn free_terms_time_independent(&self) -> bool {
        self.forcing.as_ref().is_none_or(|f| f.is_time_independent())
            && self
                .noise_forcing
                .iter()
                .flatten()
                .all(|g| g.is_time_independent())
    }

    /// All named coefficient fields, for validation sweeps.
    fn named_fields(&self) -> Vec<(String, &CoefficientField)> {
        let mut out = Vec::new();
        for t in &self.drift {
            out.push((format!("a[{:?},{:?}]", t.alpha, t.beta), &t.coefficient));
        }
        for (k, terms) in self.diffusion.iter().enumerate() {
            for t in terms {
                out.push((format!("b[{k}][{:?}]", t.alpha), &t.coefficient));
            }
        }
        if let Some(f) = &self.forcing {
            out.push(("f".to_string(), f));
        }
        for (k, g) in self.noise_forcing.iter().enumerate() {
            if let Some(g) = g {
                out.push((format!("g[{k}]"), g));
            }
        }
        out
    }
}

pub struct ProblemBuilder {
    dim: usize,
    noise_dim: usize,
    horizon: f64,
    drift: Vec<DriftTerm>,
    diffusion: Vec<Vec<DiffusionTerm>>,
    forcing: Option<CoefficientField>,
    noise_forcing: Vec<Option<CoefficientField>>,
    nonlinearity: Option<Nonlinearity>,
    initial: Option<Arc<InitialFn>>,
    fingerprint: Option<String>,
}

impl ProblemBuilder {
    /// Adds the drift coefficient `a^{αβ}`.
    pub fn drift(mut self, alpha: DiffIndex, beta: DiffIndex, coefficient: CoefficientField) -> Self {
        self.drift.push(DriftTerm {
            alpha,
            beta,
            coefficient,
        });
        self
    }

    /// Adds the diffusion coefficient `b^α_k`.
    pub fn diffusion(mut self, k: usize, alpha: DiffIndex, coefficient: CoefficientField) -> Self {
        if k >= self.diffusion.len() {
            self.diffusion.resize(k + 1, Vec::new());
        }
        self.diffusion[k].push(DiffusionTerm { alpha, coefficient });
        self
    }

    pub fn forcing(mut self, f: CoefficientField) -> Self {
        self.forcing = Some(f);
        self
    }

    pub fn noise_forcing(mut self, k: usize, g: CoefficientField) -> Self {
        if k >= self.noise_forcing.len() {
            self.noise_forcing.resize(k + 1, None);
        }
        self.noise_forcing[k] = Some(g);
        self
    }

    pub fn nonlinearity(mut self, f: Nonlinearity) -> Self {
        self.nonlinearity = Some(f);
        self
    }

    pub fn initial<F>(mut self, u0: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.initial = Some(Arc::new(u0));
        self
    }

    pub fn fingerprint(mut self, id: impl Into<String>) -> Self {
        self.fingerprint = Some(id.into());
        self
    }

    pub fn build(self) -> Result<ProblemSpec, ModelError> {
        let invalid = |msg: String| Err(ModelError::Invalid(msg));
        if self.dim == 0 {
            return invalid("spatial dimension must be positive".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return invalid(format!("horizon T must be positive, got {}", self.horizon));
        }
        if self.diffusion.len() > self.noise_dim || self.noise_forcing.len() > self.noise_dim {
            return invalid(format!(
                "noise coefficients reference more than d1 = {} components",
                self.noise_dim
            ));
        }
        let check_index = |idx: DiffIndex| match idx {
            DiffIndex::Axis(a) if a >= self.dim => Err(ModelError::Invalid(format!(
                "derivative axis {a} out of range for dimension {}",
                self.dim
            ))),
            _ => Ok(()),
        };
        let mut seen = std::collections::BTreeSet::new();
        for term in &self.drift {
            check_index(term.alpha)?;
            check_index(term.beta)?;
            if !seen.insert((term.alpha, term.beta)) {
                return invalid(format!("duplicate drift coefficient a[{:?},{:?}]", term.alpha, term.beta));
            }
        }
        for (k, terms) in self.diffusion.iter().enumerate() {
            let mut seen = std::collections::BTreeSet::new();
            for term in terms {
                check_index(term.alpha)?;
                if !seen.insert(term.alpha) {
                    return invalid(format!("duplicate diffusion coefficient b[{k}][{:?}]", term.alpha));
                }
            }
        }
        let initial = match self.initial {
            Some(u0) => u0,
            None => return invalid("initial condition missing".into()),
        };
        let mut diffusion = self.diffusion;
        diffusion.resize(self.noise_dim, Vec::new());
        let mut noise_forcing = self.noise_forcing;
        noise_forcing.resize(self.noise_dim, None);
        let spec = ProblemSpec {
            dim: self.dim,
            noise_dim: self.noise_dim,
            horizon: self.horizon,
            drift: self.drift,
            diffusion,
            forcing: self.forcing,
            noise_forcing,
            nonlinearity: self.nonlinearity,
            initial,
            fingerprint: self.fingerprint,
        };
        spot_check(&spec)?;
        Ok(spec)
    }
}

/// Evaluates every coefficient on a 4^d lattice at three times and rejects
/// non-finite values; warns if parabolicity already fails there.
fn spot_check(spec: &ProblemSpec) -> Result<(), ModelError> {
    let lattice = crate::grid::GridSpec::new(spec.dim, 4)?;
    let times = [0.0, 0.5 * spec.horizon, spec.horizon];
    let mut x = vec![0.0; spec.dim];
    for (name, field) in spec.named_fields() {
        for &t in &times {
            for idx in 0..lattice.len() {
                lattice.point_into(idx, &mut x);
                let value = field.value(t, &x);
                if !value.is_finite() {
                    return Err(ModelError::NonFinite {
                        name,
                        t,
                        x: x.clone(),
                        value,
                    });
                }
            }
        }
    }
    for idx in 0..lattice.len() {
        lattice.point_into(idx, &mut x);
        let value = spec.initial_value(&x);
        if !value.is_finite() {
            return Err(ModelError::NonFinite {
                name: "u0".into(),
                t: 0.0,
                x: x.clone(),
                value,
            });
        }
    }
    if let Err(e) = check_parabolicity(spec, &lattice, &times) {
        log::warn!("problem is not stochastically parabolic on the spot-check lattice: {e}");
    }
    Ok(())
}
