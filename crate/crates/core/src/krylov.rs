//! Krylov solvers for the linear systems arising in implicit steps and in
//! operator-norm estimation. Residuals are measured in the Euclidean norm,
//! which is proportional to `|·|_{h,0}`, so relative tolerances coincide.

use thiserror::Error;

use crate::sparse::LinearMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrylovOutcome {
    pub iterations: usize,
    /// Relative residual `|r_j| / |b|` after each iteration, starting with
    /// the initial guess.
    pub residual_history: Vec<f64>,
}

impl KrylovOutcome {
    pub fn final_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KrylovError {
    #[error("no convergence after {iterations} iterations (relative residual {last:.3e})", last = history.last().copied().unwrap_or(f64::NAN))]
    NotConverged {
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("breakdown at iteration {iteration}")]
    Breakdown { iteration: usize, history: Vec<f64> },
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn initial_residual(a: &dyn LinearMap, b: &[f64], x: &[f64], r: &mut [f64]) {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
}

/// Conjugate gradients for symmetric positive definite `a`. `x` holds the
/// initial guess on entry and the solution on exit.
pub fn conjugate_gradient(
    a: &dyn LinearMap,
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovOutcome, KrylovError> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome {
            iterations: 0,
            residual_history: vec![0.0],
        });
    }
    let mut r = vec![0.0; n];
    initial_residual(a, b, x, &mut r);
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut history = vec![rr.sqrt() / b_norm];
    for it in 1..=opts.max_iter {
        if *history.last().unwrap() <= opts.rel_tol {
            return Ok(KrylovOutcome {
                iterations: it - 1,
                residual_history: history,
            });
        }
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(KrylovError::Breakdown {
                iteration: it,
                history,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        history.push(rr_new.sqrt() / b_norm);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    if *history.last().unwrap() <= opts.rel_tol {
        return Ok(KrylovOutcome {
            iterations: opts.max_iter,
            residual_history: history,
        });
    }
    Err(KrylovError::NotConverged {
        iterations: opts.max_iter,
        history,
    })
}

/// BiCGSTAB for general non-singular `a`.
pub fn bicgstab(
    a: &dyn LinearMap,
    b: &[f64],
    x: &mut [f64],
    opts: KrylovOptions,
) -> Result<KrylovOutcome, KrylovError> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(KrylovOutcome {
            iterations: 0,
            residual_history: vec![0.0],
        });
    }
    let mut r = vec![0.0; n];
    initial_residual(a, b, x, &mut r);
    let r_hat = r.clone();
    let mut history = vec![norm(&r) / b_norm];
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=opts.max_iter {
        if *history.last().unwrap() <= opts.rel_tol {
            return Ok(KrylovOutcome {
                iterations: it - 1,
                residual_history: history,
            });
        }
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || omega == 0.0 {
            return Err(KrylovError::Breakdown {
                iteration: it,
                history,
            });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        a.apply(&p, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            return Err(KrylovError::Breakdown {
                iteration: it,
                history,
            });
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / b_norm <= opts.rel_tol {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            history.push(norm(&s) / b_norm);
            return Ok(KrylovOutcome {
                iterations: it,
                residual_history: history,
            });
        }
        a.apply(&s, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        history.push(norm(&r) / b_norm);
    }
    if *history.last().unwrap() <= opts.rel_tol {
        return Ok(KrylovOutcome {
            iterations: opts.max_iter,
            residual_history: history,
        });
    }
    Err(KrylovError::NotConverged {
        iterations: opts.max_iter,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{SparseOperator, StencilBuilder};

    fn periodic_laplacian_system(n: usize, tau: f64, advect: f64) -> SparseOperator {
        // I - tau * (second difference) + advect * forward difference, h = 1/n
        let h2 = (n * n) as f64;
        let mut b = StencilBuilder::new(n);
        for i in 0..n {
            let (l, r) = ((i + n - 1) % n, (i + 1) % n);
            b.add(i, i, 1.0 + 2.0 * tau * h2);
            b.add(i, l, -tau * h2);
            b.add(i, r, -tau * h2);
            b.add(i, r, advect * n as f64);
            b.add(i, i, -advect * n as f64);
        }
        b.build()
    }

    fn residual(a: &SparseOperator, x: &[f64], b: &[f64]) -> f64 {
        let mut ax = vec![0.0; b.len()];
        a.apply(x, &mut ax);
        let r: f64 = ax.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        r.sqrt() / norm(b)
    }

    #[test]
    fn cg_solves_spd_system() {
        let a = periodic_laplacian_system(64, 1e-3, 0.0);
        let b: Vec<f64> = (0..64).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let mut x = vec![0.0; 64];
        let out = conjugate_gradient(&a, &b, &mut x, KrylovOptions { rel_tol: 1e-12, max_iter: 500 }).unwrap();
        assert!(out.final_residual() <= 1e-12);
        assert!(residual(&a, &x, &b) < 1e-11);
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let a = periodic_laplacian_system(64, 1e-3, 0.05);
        assert!(!a.is_symmetric(1e-12));
        let b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut x = vec![0.0; 64];
        bicgstab(&a, &b, &mut x, KrylovOptions { rel_tol: 1e-12, max_iter: 500 }).unwrap();
        assert!(residual(&a, &x, &b) < 1e-11);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = SparseOperator::identity(4);
        let mut x = vec![1.0; 4];
        let out = conjugate_gradient(&a, &[0.0; 4], &mut x, KrylovOptions { rel_tol: 1e-10, max_iter: 1 }).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(x, vec![0.0; 4]);
    }

    #[test]
    fn iteration_cap_reports_history() {
        let a = periodic_laplacian_system(128, 1.0, 0.0);
        let b: Vec<f64> = (0..128).map(|i| if i == 3 { 1.0 } else { 0.0 }).collect();
        let mut x = vec![0.0; 128];
        match conjugate_gradient(&a, &b, &mut x, KrylovOptions { rel_tol: 1e-14, max_iter: 3 }) {
            Err(KrylovError::NotConverged { iterations, history }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 4);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
