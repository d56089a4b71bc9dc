//! Structural constants: stochastic parabolicity, the monotonicity majorant
//! gating implicit steps, and numerically estimated operator norms feeding
//! the explicit-scheme stability budget.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::grid::{inverse_constant, GridSpec};
use crate::krylov::{conjugate_gradient, KrylovOptions};
use crate::numerics::splitmix64;
use crate::sparse::{LinearMap, SparseOperator, StencilBuilder};

use super::operators::{assemble_lh, assemble_mkh};
use super::{DiffIndex, ModelError, ProblemSpec};

/// Relative tolerance on successive top Ritz values of the norm estimate.
pub const NORM_ESTIMATE_TOL: f64 = 1e-6;
pub const NORM_ESTIMATE_MAX_ITER: usize = 200;

/// Smallest eigenvalue of the parabolicity symbol over a sample, with the
/// point where it is attained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parabolicity {
    pub lambda: f64,
    pub t: f64,
    pub x: Vec<f64>,
}

/// Smallest eigenvalue of the symmetric part of
/// `[a^{e_i e_j}(t,x) - ½ Σ_k b^{e_i}_k b^{e_j}_k(t,x)]_{ij}`.
fn symbol_min_eigenvalue(spec: &ProblemSpec, t: f64, x: &[f64]) -> Result<f64, ModelError> {
    let d = spec.dim();
    let mut m = DMatrix::<f64>::zeros(d, d);
    let finite = |name: String, value: f64| {
        if value.is_finite() {
            Ok(value)
        } else {
            Err(ModelError::NonFinite {
                name,
                t,
                x: x.to_vec(),
                value,
            })
        }
    };
    for term in spec.drift_terms() {
        if let (DiffIndex::Axis(i), DiffIndex::Axis(j)) = (term.alpha, term.beta) {
            let a = finite(format!("a[{i},{j}]"), term.coefficient.value(t, x))?;
            m[(i, j)] += 0.5 * a;
            m[(j, i)] += 0.5 * a;
        }
    }
    for k in 0..spec.noise_dim() {
        let mut row = vec![0.0; d];
        for term in spec.diffusion_terms(k)? {
            if let DiffIndex::Axis(i) = term.alpha {
                row[i] = finite(format!("b[{k}][{i}]"), term.coefficient.value(t, x))?;
            }
        }
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] -= 0.5 * row[i] * row[j];
            }
        }
    }
    if d == 1 {
        return Ok(m[(0, 0)]);
    }
    Ok(SymmetricEigen::new(m).eigenvalues.min())
}

fn min_over_points<'a, I>(spec: &ProblemSpec, points: I, times: &[f64]) -> Result<Parabolicity, ModelError>
where
    I: Iterator<Item = Vec<f64>> + Clone + 'a,
{
    if times.is_empty() {
        return Err(ModelError::Invalid("parabolicity check needs at least one time".into()));
    }
    let mut best: Option<Parabolicity> = None;
    for &t in times {
        for x in points.clone() {
            let lambda = symbol_min_eigenvalue(spec, t, &x)?;
            if best.as_ref().is_none_or(|b| lambda < b.lambda) {
                best = Some(Parabolicity { lambda, t, x });
            }
        }
    }
    let best = best.ok_or_else(|| ModelError::Invalid("empty parabolicity sample".into()))?;
    if best.lambda > 0.0 {
        Ok(best)
    } else {
        Err(ModelError::NotParabolic {
            lambda: best.lambda,
            t: best.t,
            x: best.x,
        })
    }
}

/// Stochastic parabolicity on the lattice of `sample` at `times`.
pub fn check_parabolicity(spec: &ProblemSpec, sample: &GridSpec, times: &[f64]) -> Result<Parabolicity, ModelError> {
    let sample = *sample;
    min_over_points(spec, (0..sample.len()).map(move |i| sample.point(i)), times)
}

/// [`check_parabolicity`] on the lattice of `grid` plus `4 N^d` pseudo-random
/// torus points derived from `seed`. The certificate is sampled, not
/// symbolic.
pub fn certify_parabolicity(
    spec: &ProblemSpec,
    grid: &GridSpec,
    times: &[f64],
    seed: u64,
) -> Result<Parabolicity, ModelError> {
    let lattice = check_parabolicity(spec, grid, times)?;
    let d = grid.dim();
    let count = 4 * grid.len();
    let random = (0..count).map(move |i| {
        (0..d)
            .map(|a| {
                let bits = splitmix64(seed ^ splitmix64((i * d + a) as u64));
                (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
            })
            .collect::<Vec<f64>>()
    });
    let sampled = min_over_points(spec, random, times)?;
    Ok(if sampled.lambda < lattice.lambda { sampled } else { lattice })
}

/// Concrete majorant of the monotonicity constant used to gate implicit
/// steps: `sup |a^{00}| + Σ_k |b^0_k|^2 + Lip_r(F)` over the lattice and
/// `times`.
pub fn monotonicity_constant(spec: &ProblemSpec, grid: &GridSpec, times: &[f64]) -> f64 {
    let mut x = vec![0.0; grid.dim()];
    let mut sup = 0.0_f64;
    for &t in times {
        for idx in 0..grid.len() {
            grid.point_into(idx, &mut x);
            let mut value = 0.0;
            for term in spec.drift_terms() {
                if term.alpha.is_zero() && term.beta.is_zero() {
                    value += term.coefficient.value(t, &x).abs();
                }
            }
            for k in 0..spec.noise_dim() {
                for term in spec.diffusion_terms(k).expect("k < noise_dim") {
                    if term.alpha.is_zero() {
                        value += term.coefficient.value(t, &x).powi(2);
                    }
                }
            }
            sup = sup.max(value);
        }
    }
    sup + spec.nonlinearity().map_or(0.0, |nl| nl.lipschitz_r())
}

/// Numerically estimated squared operator norms: `l1` of `L_h: V_n → V_n^*`
/// and `l2 = Σ_k` of `M_{k,h}: V_n → H_n`, with `V_n = W^1_{h,2}`,
/// `H_n = W^0_{h,2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorNorms {
    pub l1: f64,
    pub l2: f64,
    pub l2_per_noise: Vec<f64>,
    pub iterations: usize,
}

/// Gram matrix of `|·|_{h,1}` up to the factor `h^d`: `I - Σ_i δ_{-i} δ_{+i}`.
fn sobolev_gram(grid: &GridSpec) -> SparseOperator {
    let inv_h2 = (grid.n() * grid.n()) as f64;
    let mut b = StencilBuilder::new(grid.len());
    for row in 0..grid.len() {
        b.add(row, row, 1.0 + 2.0 * grid.dim() as f64 * inv_h2);
        for axis in 0..grid.dim() {
            b.add(row, grid.shift(row, axis, 1), -inv_h2);
            b.add(row, grid.shift(row, axis, -1), -inv_h2);
        }
    }
    b.build()
}

fn gram_solve(gram: &SparseOperator, rhs: &[f64]) -> Result<Vec<f64>, ModelError> {
    let mut x = vec![0.0; rhs.len()];
    conjugate_gradient(
        gram,
        rhs,
        &mut x,
        KrylovOptions {
            rel_tol: 1e-13,
            max_iter: 10 * rhs.len() + 100,
        },
    )?;
    Ok(x)
}

fn gram_norm_sq(gram: &SparseOperator, x: &[f64]) -> f64 {
    let mut gx = vec![0.0; x.len()];
    gram.apply(x, &mut gx);
    gx.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Largest `|A x|_target^2 / |x|_V^2` with `W = G^{-1}` (target `V^*`) or
/// `W = I` (target `H`).
///
/// Lanczos on `G^{-1} Aᵀ W A`, which is self-adjoint in the `G` inner
/// product, with full reorthogonalization. Ritz values are Rayleigh quotients,
/// so the estimate never exceeds the true norm. Stops once the top Ritz value
/// moves by at most `NORM_ESTIMATE_TOL` relative, or the Krylov space is
/// exhausted.
fn top_generalized_eigenvalue(
    op: &SparseOperator,
    gram: &SparseOperator,
    target_dual: bool,
    which: &str,
) -> Result<(f64, usize), ModelError> {
    if op.is_zero() {
        return Ok((0.0, 0));
    }
    let n = op.dim();
    let g_dot = |a: &[f64], b: &[f64]| -> f64 {
        let mut gb = vec![0.0; n];
        gram.apply(b, &mut gb);
        a.iter().zip(&gb).map(|(x, y)| x * y).sum()
    };
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let bits = splitmix64(0x5EED ^ splitmix64(i as u64));
            (bits >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect();
    let norm = gram_norm_sq(gram, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= norm);

    let mut basis: Vec<Vec<f64>> = vec![x];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut history: Vec<f64> = Vec::new();
    let mut y = vec![0.0; n];
    let mut k = vec![0.0; n];
    for it in 1..=NORM_ESTIMATE_MAX_ITER.min(n) {
        let v = basis.last().expect("non-empty basis");
        op.apply(v, &mut y);
        let z = if target_dual { gram_solve(gram, &y)? } else { y.clone() };
        op.apply_transpose(&z, &mut k);
        alphas.push(v.iter().zip(&k).map(|(a, b)| a * b).sum());
        let mut w = gram_solve(gram, &k)?;
        // Full reorthogonalization, twice for stability.
        for _ in 0..2 {
            for q in &basis {
                let c = g_dot(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let tri = DMatrix::from_fn(alphas.len(), alphas.len(), |i, j| {
            if i == j {
                alphas[i]
            } else if i + 1 == j {
                betas[i]
            } else if j + 1 == i {
                betas[j]
            } else {
                0.0
            }
        });
        let mu = SymmetricEigen::new(tri).eigenvalues.max().max(0.0);
        let beta = gram_norm_sq(gram, &w).max(0.0).sqrt();
        let exhausted = !(beta > 1e-14 * mu.sqrt().max(f64::MIN_POSITIVE)) || it == n;
        if let Some(&prev) = history.last() {
            if (mu - prev).abs() <= NORM_ESTIMATE_TOL * mu {
                return Ok((mu, it));
            }
        }
        if exhausted || mu == 0.0 {
            return Ok((mu, it));
        }
        history.push(mu);
        betas.push(beta);
        w.iter_mut().for_each(|v| *v /= beta);
        basis.push(w);
    }
    Err(ModelError::Estimation {
        which: which.to_string(),
        iterations: NORM_ESTIMATE_MAX_ITER,
        history,
    })
}

pub fn estimate_operator_norms(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<OperatorNorms, ModelError> {
    let gram = sobolev_gram(grid);
    let lh = assemble_lh(spec, grid, t)?;
    let (l1, mut iterations) = top_generalized_eigenvalue(&lh, &gram, true, "L_h")?;
    let mut l2_per_noise = Vec::with_capacity(spec.noise_dim());
    for k in 0..spec.noise_dim() {
        let mk = assemble_mkh(spec, k, grid, t)?;
        let (c, its) = top_generalized_eigenvalue(&mk, &gram, false, &format!("M_{k},h"))?;
        iterations += its;
        l2_per_noise.push(c);
    }
    Ok(OperatorNorms {
        l1,
        l2: l2_per_noise.iter().sum(),
        l2_per_noise,
        iterations,
    })
}

/// Constants entering the explicit-scheme stability condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityBudget {
    pub l1: f64,
    pub l2: f64,
    pub kappa: f64,
    pub lambda: f64,
    pub q: f64,
}

/// Default stability margin as a fraction of `λ`.
pub const DEFAULT_MARGIN_FRACTION: f64 = 0.9;

impl StabilityBudget {
    pub fn new(l1: f64, l2: f64, kappa: f64, lambda: f64, q: f64) -> Result<Self, ModelError> {
        for (name, v) in [("L1", l1), ("L2", l2), ("kappa", kappa), ("lambda", lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::Invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if !(q >= 0.0 && q < lambda) {
            return Err(ModelError::BadMargin { q, lambda });
        }
        Ok(Self {
            l1,
            l2,
            kappa,
            lambda,
            q,
        })
    }

    pub fn with_margin(self, q: f64) -> Result<Self, ModelError> {
        Self::new(self.l1, self.l2, self.kappa, self.lambda, q)
    }
}

/// Operator norms at time `t` on `grid`, `κ(d)`, and `λ` from the lattice
/// parabolicity check at `t`; `q` defaults to `0.9 λ`.
pub fn estimate_constants(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<StabilityBudget, ModelError> {
    let parabolicity = check_parabolicity(spec, grid, &[t])?;
    let norms = estimate_operator_norms(spec, grid, t)?;
    StabilityBudget::new(
        norms.l1,
        norms.l2,
        inverse_constant(grid.dim()),
        parabolicity.lambda,
        DEFAULT_MARGIN_FRACTION * parabolicity.lambda,
    )
}
