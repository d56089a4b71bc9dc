//! Finite-difference operators
//!
//! ```text
//! L_h(t) φ   = Σ δ_-^α (a^{αβ}(t,·) δ_+^β φ)
//! M_{k,h}(t) φ = Σ b^α_k(t,·) δ_+^α φ
//! F_h(t, φ)  = F(t, z, ∇_h φ(z), φ(z)) + f(t, z)
//! ```
//!
//! Two routes are provided: composition of grid differences (`apply_*`),
//! which follows the definitions literally, and assembled sparse stencils
//! (`assemble_*`) used inside the time-stepping loops.

use crate::grid::{diff, diff_into, GridFn, GridSpec, Sign};
use crate::sparse::{SparseOperator, StencilBuilder};

use super::{CoefficientField, DiffIndex, ModelError, ProblemSpec};

fn check_grid(spec: &ProblemSpec, grid: &GridSpec) -> Result<(), ModelError> {
    if grid.dim() != spec.dim() {
        return Err(ModelError::Invalid(format!(
            "grid dimension {} does not match problem dimension {}",
            grid.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Values of `field(t, ·)` at every lattice point.
pub(crate) fn sample_field(field: &CoefficientField, t: f64, grid: &GridSpec) -> Vec<f64> {
    if let Some(c) = field.constant_value() {
        return vec![c; grid.len()];
    }
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|idx| {
            grid.point_into(idx, &mut x);
            field.value(t, &x)
        })
        .collect()
}

/// Time average of `field` over `[t0, t1]` at every lattice point.
pub(crate) fn sample_field_averaged(field: &CoefficientField, t0: f64, t1: f64, grid: &GridSpec) -> Vec<f64> {
    let mut x = vec![0.0; grid.dim()];
    (0..grid.len())
        .map(|idx| {
            grid.point_into(idx, &mut x);
            field.time_average(t0, t1, &x)
        })
        .collect()
}

fn one_sided(v: &GridFn, index: DiffIndex, sign: Sign) -> Result<GridFn, ModelError> {
    Ok(match index {
        DiffIndex::Zero => v.clone(),
        DiffIndex::Axis(axis) => diff(v, axis, sign)?,
    })
}

pub fn apply_lh(spec: &ProblemSpec, t: f64, v: &GridFn) -> Result<GridFn, ModelError> {
    let grid = *v.spec();
    check_grid(spec, &grid)?;
    let mut out = GridFn::zeros(grid);
    for term in spec.drift_terms() {
        let mut inner = one_sided(v, term.beta, Sign::Forward)?;
        let coef = sample_field(&term.coefficient, t, &grid);
        inner.values_mut().iter_mut().zip(&coef).for_each(|(x, c)| *x *= c);
        let outer = one_sided(&inner, term.alpha, Sign::Backward)?;
        out.axpy(1.0, &outer)?;
    }
    Ok(out)
}

pub fn apply_mkh(spec: &ProblemSpec, k: usize, t: f64, v: &GridFn) -> Result<GridFn, ModelError> {
    let grid = *v.spec();
    check_grid(spec, &grid)?;
    let mut out = GridFn::zeros(grid);
    for term in spec.diffusion_terms(k)? {
        let mut d = one_sided(v, term.alpha, Sign::Forward)?;
        let coef = sample_field(&term.coefficient, t, &grid);
        d.values_mut().iter_mut().zip(&coef).for_each(|(x, c)| *x *= c);
        out.axpy(1.0, &d)?;
    }
    Ok(out)
}

pub fn apply_fh(spec: &ProblemSpec, t: f64, v: &GridFn) -> Result<GridFn, ModelError> {
    check_grid(spec, v.spec())?;
    if !spec.has_reaction() {
        return Err(ModelError::NoReaction);
    }
    let mut out = vec![0.0; v.spec().len()];
    let forcing = spec.forcing().map(|f| sample_field(f, t, v.spec()));
    reaction_into(spec, t, forcing.as_deref(), v.spec(), v.values(), &mut out);
    Ok(GridFn::new(*v.spec(), out)?)
}

/// `out = F(t, z, ∇_h v, v) + forcing` with the forcing already sampled.
pub(crate) fn reaction_into(
    spec: &ProblemSpec,
    t: f64,
    forcing: Option<&[f64]>,
    grid: &GridSpec,
    v: &[f64],
    out: &mut [f64],
) {
    match forcing {
        Some(f) => out.copy_from_slice(f),
        None => out.iter_mut().for_each(|o| *o = 0.0),
    }
    let Some(nl) = spec.nonlinearity() else {
        return;
    };
    let dim = grid.dim();
    let gradient: Vec<Vec<f64>> = if nl.depends_on_gradient() {
        (0..dim)
            .map(|axis| {
                let mut g = vec![0.0; grid.len()];
                diff_into(grid, v, axis, Sign::Forward, &mut g);
                g
            })
            .collect()
    } else {
        Vec::new()
    };
    let mut x = vec![0.0; dim];
    let mut p = vec![0.0; dim];
    for idx in 0..grid.len() {
        grid.point_into(idx, &mut x);
        for (axis, g) in gradient.iter().enumerate() {
            p[axis] = g[idx];
        }
        out[idx] += nl.eval(t, &x, &p, v[idx]);
    }
}

/// Stencil of a one-sided difference: `(axis shift, weight)` pairs.
fn stencil(index: DiffIndex, sign: Sign, inv_h: f64) -> Vec<(Option<(usize, isize)>, f64)> {
    match (index, sign) {
        (DiffIndex::Zero, _) => vec![(None, 1.0)],
        (DiffIndex::Axis(a), Sign::Forward) => vec![(Some((a, 1)), inv_h), (None, -inv_h)],
        (DiffIndex::Axis(a), Sign::Backward) => vec![(None, inv_h), (Some((a, -1)), -inv_h)],
    }
}

fn shifted(grid: &GridSpec, idx: usize, offset: Option<(usize, isize)>) -> usize {
    match offset {
        None => idx,
        Some((axis, o)) => grid.shift(idx, axis, o),
    }
}

/// Sparse matrix of `L_h(t)` on `grid`.
pub fn assemble_lh(spec: &ProblemSpec, grid: &GridSpec, t: f64) -> Result<SparseOperator, ModelError> {
    check_grid(spec, grid)?;
    let inv_h = grid.n() as f64;
    let mut builder = StencilBuilder::new(grid.len());
    for term in spec.drift_terms() {
        let coef = sample_field(&term.coefficient, t, grid);
        let outer = stencil(term.alpha, Sign::Backward, inv_h);
        let inner = stencil(term.beta, Sign::Forward, inv_h);
        for row in 0..grid.len() {
            for &(o1, w1) in &outer {
                let y = shifted(grid, row, o1);
                let cy = coef[y];
                for &(o2, w2) in &inner {
                    builder.add(row, shifted(grid, y, o2), w1 * cy * w2);
                }
            }
        }
    }
    Ok(builder.build())
}

/// Sparse matrix of `M_{k,h}(t)` on `grid`.
pub fn assemble_mkh(spec: &ProblemSpec, k: usize, grid: &GridSpec, t: f64) -> Result<SparseOperator, ModelError> {
    check_grid(spec, grid)?;
    let inv_h = grid.n() as f64;
    let mut builder = StencilBuilder::new(grid.len());
    for term in spec.diffusion_terms(k)? {
        let coef = sample_field(&term.coefficient, t, grid);
        let st = stencil(term.alpha, Sign::Forward, inv_h);
        for row in 0..grid.len() {
            for &(o, w) in &st {
                builder.add(row, shifted(grid, row, o), coef[row] * w);
            }
        }
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::restrict;
    use crate::model::{Nonlinearity, TrigField};
    use crate::sparse::LinearMap;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn sine(spec: &GridSpec) -> GridFn {
        restrict(|x| (2.0 * PI * x[0]).sin(), spec).unwrap()
    }

    fn laplacian_1d() -> ProblemSpec {
        ProblemSpec::builder(1, 1, 1.0)
            .drift(DiffIndex::Axis(0), DiffIndex::Axis(0), CoefficientField::constant(1.0))
            .initial(|_| 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn laplacian_eigenvalue_on_four_points() {
        let grid = GridSpec::new(1, 4).unwrap();
        let v = sine(&grid);
        let lv = apply_lh(&laplacian_1d(), 0.0, &v).unwrap();
        for (a, b) in lv.values().iter().zip(v.values()) {
            assert_relative_eq!(*a, -32.0 * b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_order_drift_scales() {
        let spec = ProblemSpec::builder(2, 0, 1.0)
            .drift(DiffIndex::Zero, DiffIndex::Zero, CoefficientField::constant(-1.75))
            .initial(|_| 0.0)
            .build()
            .unwrap();
        let grid = GridSpec::new(2, 4).unwrap();
        let v = restrict(|x| x[0] - 2.0 * x[1], &grid).unwrap();
        assert_eq!(apply_lh(&spec, 0.0, &v).unwrap(), v.scaled(-1.75));
    }

    #[test]
    fn forward_only_terms_kill_constants() {
        let spec = ProblemSpec::builder(2, 0, 1.0)
            .drift(DiffIndex::Axis(0), DiffIndex::Axis(1), CoefficientField::constant(0.3))
            .drift(DiffIndex::Zero, DiffIndex::Axis(0), CoefficientField::trig(TrigField {
                mean: 1.0,
                amplitude: 0.5,
                wavenumbers: vec![1, 2],
                phase: 0.0,
                omega: 0.0,
            }))
            .initial(|_| 0.0)
            .build()
            .unwrap();
        let v = GridFn::constant(GridSpec::new(2, 6).unwrap(), 4.0);
        assert!(apply_lh(&spec, 0.0, &v).unwrap().values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mkh_examples() {
        let spec = ProblemSpec::builder(1, 2, 1.0)
            .diffusion(0, DiffIndex::Zero, CoefficientField::constant(1.0))
            .diffusion(1, DiffIndex::Axis(0), CoefficientField::constant(1.0))
            .initial(|_| 0.0)
            .build()
            .unwrap();
        let v = GridFn::new(GridSpec::new(1, 2).unwrap(), vec![0.0, 1.0]).unwrap();
        assert_eq!(apply_mkh(&spec, 0, 0.0, &v).unwrap(), v);
        assert_eq!(apply_mkh(&spec, 1, 0.0, &v).unwrap().values(), &[2.0, -2.0]);
        let c = GridFn::constant(*v.spec(), 3.0);
        assert!(apply_mkh(&spec, 1, 0.0, &c).unwrap().values().iter().all(|&x| x == 0.0));
        assert!(matches!(
            apply_mkh(&spec, 2, 0.0, &v),
            Err(ModelError::NoiseIndex { k: 2, noise_dim: 2 })
        ));
    }

    #[test]
    fn fh_examples() {
        let grid = GridSpec::new(1, 8).unwrap();
        let base = || ProblemSpec::builder(1, 0, 1.0).initial(|_| 0.0);
        let identity = base()
            .nonlinearity(Nonlinearity::linear(1.0).unwrap())
            .build()
            .unwrap();
        let v = sine(&grid);
        assert_eq!(apply_fh(&identity, 0.0, &v).unwrap(), v);

        let forced = base()
            .forcing(CoefficientField::custom(|t, x| t + x[0]))
            .build()
            .unwrap();
        let expected = restrict(|x| 0.5 + x[0], &grid).unwrap();
        assert_eq!(apply_fh(&forced, 0.5, &v).unwrap(), expected);

        let sine_nl = base().nonlinearity(Nonlinearity::sine()).build().unwrap();
        let half_pi = GridFn::constant(grid, PI / 2.0);
        assert!(apply_fh(&sine_nl, 0.0, &half_pi)
            .unwrap()
            .values()
            .iter()
            .all(|&x| (x - 1.0).abs() < 1e-15));

        assert!(matches!(apply_fh(&base().build().unwrap(), 0.0, &v), Err(ModelError::NoReaction)));
    }

    #[test]
    fn gradient_nonlinearity_uses_forward_differences() {
        let spec = ProblemSpec::builder(1, 0, 1.0)
            .nonlinearity(Nonlinearity::new("p", 1.0, 0.0, |_, _, p, _| p[0]).unwrap())
            .initial(|_| 0.0)
            .build()
            .unwrap();
        let v = GridFn::new(GridSpec::new(1, 2).unwrap(), vec![0.0, 1.0]).unwrap();
        assert_eq!(apply_fh(&spec, 0.0, &v).unwrap().values(), &[2.0, -2.0]);
    }

    fn variable_2d() -> ProblemSpec {
        let trig = |mean, k: Vec<i32>| {
            CoefficientField::trig(TrigField {
                mean,
                amplitude: 0.25,
                wavenumbers: k,
                phase: 0.4,
                omega: 3.0,
            })
        };
        ProblemSpec::builder(2, 2, 1.0)
            .drift(DiffIndex::Axis(0), DiffIndex::Axis(0), trig(1.0, vec![1, 0]))
            .drift(DiffIndex::Axis(1), DiffIndex::Axis(1), trig(1.2, vec![0, 1]))
            .drift(DiffIndex::Axis(0), DiffIndex::Axis(1), trig(0.1, vec![1, 1]))
            .drift(DiffIndex::Zero, DiffIndex::Axis(1), trig(0.3, vec![2, 0]))
            .drift(DiffIndex::Axis(1), DiffIndex::Zero, trig(-0.2, vec![0, 1]))
            .drift(DiffIndex::Zero, DiffIndex::Zero, trig(-0.5, vec![1, 1]))
            .diffusion(0, DiffIndex::Axis(0), trig(0.4, vec![1, 2]))
            .diffusion(0, DiffIndex::Zero, trig(0.1, vec![0, 1]))
            .diffusion(1, DiffIndex::Axis(1), trig(0.3, vec![2, 1]))
            .initial(|_| 0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn assembled_stencils_match_composition() {
        let spec = variable_2d();
        let grid = GridSpec::new(2, 7).unwrap();
        let v = restrict(|x| (2.0 * PI * x[0]).sin() * (x[1] * 3.0).exp() + x[0] * x[1], &grid).unwrap();
        let t = 0.37;
        let direct = apply_lh(&spec, t, &v).unwrap();
        let mut assembled = vec![0.0; grid.len()];
        assemble_lh(&spec, &grid, t).unwrap().apply(v.values(), &mut assembled);
        for (a, b) in direct.values().iter().zip(&assembled) {
            assert_relative_eq!(*a, *b, epsilon = 1e-9, max_relative = 1e-12);
        }
        for k in 0..2 {
            let direct = apply_mkh(&spec, k, t, &v).unwrap();
            assemble_mkh(&spec, k, &grid, t).unwrap().apply(v.values(), &mut assembled);
            for (a, b) in direct.values().iter().zip(&assembled) {
                assert_relative_eq!(*a, *b, epsilon = 1e-10, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_only_for_symmetric_principal_part() {
        let grid = GridSpec::new(1, 16).unwrap();
        assert!(assemble_lh(&laplacian_1d(), &grid, 0.0).unwrap().is_symmetric(1e-13));
        assert!(!assemble_lh(&variable_2d(), &GridSpec::new(2, 5).unwrap(), 0.0)
            .unwrap()
            .is_symmetric(1e-13));
    }
}
