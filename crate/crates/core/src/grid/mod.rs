//! Periodic discrete Sobolev calculus on the unit torus `[0,1)^d`.
//!
//! A [`GridSpec`] fixes the dimension `d` and the number of points per axis
//! `N`; the mesh size is `h = 1/N` and every index computation wraps modulo
//! `N`. Grid functions are stored row-major over `(k_1, ..., k_d)`, the value
//! at flat index `i` being the value at the lattice point `h * k`.
//!
//! Forward and backward differences are
//!
//! ```text
//! δ_{+i} v(z) = (v(z + h e_i) - v(z)) / h
//! δ_{-i} v(z) = (v(z) - v(z - h e_i)) / h
//! ```
//!
//! and the discrete Sobolev norm of order `m` sums the squared forward
//! differences of every multi-index of length at most `m`, weighted by the
//! cell volume `h^d`.

pub(crate) mod io;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::CompensatedSum;

pub use io::{read_grid_fn, write_grid_fn, GridFnFormat, GridFnHeader};

/// Highest multi-index length accepted by [`multi_diff`] and [`sobolev_norm`].
pub const MAX_ORDER: usize = 2;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be positive")]
    ZeroDimension,
    #[error("a periodic grid needs at least 2 points per axis, got {0}")]
    TooFewPoints(usize),
    #[error("a grid of {n}^{dim} points overflows the index range")]
    TooLarge { dim: usize, n: usize },
    #[error("axis {axis} out of range for a {dim}-dimensional grid")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("grid functions live on different grids ({left} vs {right})")]
    GridMismatch { left: GridSpec, right: GridSpec },
    #[error("multi-index of order {order} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooHigh { order: usize },
    #[error("multi-index has {got} components but the grid has dimension {dim}")]
    IndexDimension { got: usize, dim: usize },
    #[error("value array has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("non-finite value {value} at lattice point {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },
    #[error("inverse-inequality ratio is undefined for the zero grid function")]
    ZeroFunction,
    #[error("malformed grid-function file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Periodic lattice with `n` points per axis in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    n: usize,
}

impl GridSpec {
    pub fn new(dim: usize, n: usize) -> Result<Self, GridError> {
        if dim == 0 {
            return Err(GridError::ZeroDimension);
        }
        if n < 2 {
            return Err(GridError::TooFewPoints(n));
        }
        let total = u32::try_from(dim)
            .ok()
            .and_then(|d| n.checked_pow(d))
            .ok_or(GridError::TooLarge { dim, n })?;
        // Flat indices are also shifted by +/- stride, keep headroom.
        if total > isize::MAX as usize / 2 {
            return Err(GridError::TooLarge { dim, n });
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Points per axis, `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Mesh size `h = 1/N`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Total number of lattice points `N^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell volume `h^d`, the quadrature weight of every lattice point.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Flat-index stride of `axis` (0-based) in row-major order.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn check_axis(&self, axis: usize) -> Result<(), GridError> {
        if axis < self.dim {
            Ok(())
        } else {
            Err(GridError::AxisOutOfRange {
                axis,
                dim: self.dim,
            })
        }
    }

    /// Lattice index `k_axis` of the flat index `idx`.
    #[inline]
    pub fn component(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.n
    }

    /// Flat index of the periodic neighbour `idx + offset * e_axis`.
    #[inline]
    pub fn shift(&self, idx: usize, axis: usize, offset: isize) -> usize {
        let stride = self.stride(axis);
        let k = (idx / stride) % self.n;
        let n = self.n as isize;
        let shifted = (k as isize + offset).rem_euclid(n) as usize;
        idx - k * stride + shifted * stride
    }

    /// Coordinates `h * k` of the lattice point with flat index `idx`.
    pub fn point_into(&self, idx: usize, out: &mut [f64]) {
        let h = self.h();
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = (rest % self.n) as f64 * h;
            rest /= self.n;
        }
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        self.point_into(idx, &mut x);
        x
    }

    /// True if every lattice point of `coarse` is a lattice point of `self`.
    pub fn refines(&self, coarse: &GridSpec) -> bool {
        self.dim == coarse.dim && self.n.is_multiple_of(coarse.n)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}^{}", self.n, self.dim)
    }
}

/// Direction of a one-sided difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Forward,
    Backward,
}

/// Multi-index `α = (α_1, ..., α_d)` with `|α| ≤ MAX_ORDER`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    components: Vec<usize>,
}

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Result<Self, GridError> {
        let order: usize = components.iter().sum();
        if order > MAX_ORDER {
            return Err(GridError::OrderTooHigh { order });
        }
        Ok(Self { components })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            components: vec![0; dim],
        }
    }

    /// The unit multi-index `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut components = vec![0; dim];
        components[axis] = 1;
        Self { components }
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn order(&self) -> usize {
        self.components.iter().sum()
    }

    /// Every multi-index of dimension `dim` with `|α| ≤ max_order`, in
    /// graded lexicographic order (the zero index first).
    pub fn all_up_to(dim: usize, max_order: usize) -> Vec<MultiIndex> {
        fn fill(prefix: &mut Vec<usize>, dim: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == dim {
                out.push(prefix.clone());
                return;
            }
            for a in 0..=budget {
                prefix.push(a);
                fill(prefix, dim, budget - a, out);
                prefix.pop();
            }
        }
        let mut raw = Vec::new();
        fill(&mut Vec::with_capacity(dim), dim, max_order, &mut raw);
        let mut all: Vec<MultiIndex> = raw
            .into_iter()
            .map(|components| MultiIndex { components })
            .collect();
        all.sort_by(|a, b| a.order().cmp(&b.order()).then_with(|| b.cmp(a)));
        all
    }
}

/// Real-valued function on the lattice of a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                expected: spec.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self {
            spec,
            values: vec![c; spec.len()],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn ensure_same_grid(&self, other: &GridFn) -> Result<(), GridError> {
        if self.spec == other.spec {
            Ok(())
        } else {
            Err(GridError::GridMismatch {
                left: self.spec,
                right: other.spec,
            })
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &GridFn) -> Result<(), GridError> {
        self.ensure_same_grid(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn checked_sub(&self, other: &GridFn) -> Result<GridFn, GridError> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    pub fn checked_add(&self, other: &GridFn) -> Result<GridFn, GridError> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> GridFn {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// Restriction of a grid function on a finer nested grid to `coarse` by
    /// point subsampling.
    pub fn subsample(&self, coarse: &GridSpec) -> Result<GridFn, GridError> {
        if !self.spec.refines(coarse) {
            return Err(GridError::GridMismatch {
                left: self.spec,
                right: *coarse,
            });
        }
        let ratio = self.spec.n / coarse.n;
        let dim = coarse.dim;
        let mut values = Vec::with_capacity(coarse.len());
        for idx in 0..coarse.len() {
            let mut fine_idx = 0;
            for axis in 0..dim {
                fine_idx += coarse.component(idx, axis) * ratio * self.spec.stride(axis);
            }
            values.push(self.values[fine_idx]);
        }
        Ok(GridFn {
            spec: *coarse,
            values,
        })
    }
}

/// Single one-sided difference `δ_{±axis} v` with periodic wrap-around.
/// `axis` is 0-based.
pub fn diff(v: &GridFn, axis: usize, sign: Sign) -> Result<GridFn, GridError> {
    let spec = v.spec;
    spec.check_axis(axis)?;
    let mut out = vec![0.0; spec.len()];
    diff_into(&spec, &v.values, axis, sign, &mut out);
    Ok(GridFn { spec, values: out })
}

/// Raw-slice form of [`diff`]; `out` must not alias `v`.
pub(crate) fn diff_into(spec: &GridSpec, v: &[f64], axis: usize, sign: Sign, out: &mut [f64]) {
    let inv_h = spec.n as f64;
    let stride = spec.stride(axis);
    let n = spec.n;
    let wrap = n * stride;
    for (idx, o) in out.iter_mut().enumerate() {
        let k = (idx / stride) % n;
        *o = match sign {
            Sign::Forward => {
                let next = if k + 1 == n { idx + stride - wrap } else { idx + stride };
                (v[next] - v[idx]) * inv_h
            }
            Sign::Backward => {
                let prev = if k == 0 { idx + wrap - stride } else { idx - stride };
                (v[idx] - v[prev]) * inv_h
            }
        };
    }
}

/// `δ^α_± v = δ^{α_1}_{±1} ... δ^{α_d}_{±d} v`; the zero multi-index is the
/// identity.
pub fn multi_diff(v: &GridFn, alpha: &MultiIndex, sign: Sign) -> Result<GridFn, GridError> {
    if alpha.components.len() != v.spec.dim {
        return Err(GridError::IndexDimension {
            got: alpha.components.len(),
            dim: v.spec.dim,
        });
    }
    let mut current = v.clone();
    let mut scratch = vec![0.0; v.spec.len()];
    for (axis, &times) in alpha.components.iter().enumerate() {
        for _ in 0..times {
            diff_into(&v.spec, &current.values, axis, sign, &mut scratch);
            std::mem::swap(&mut current.values, &mut scratch);
        }
    }
    Ok(current)
}

/// `(u, v) = Σ_z u(z) v(z) h^d`.
pub fn inner_product(u: &GridFn, v: &GridFn) -> Result<f64, GridError> {
    u.ensure_same_grid(v)?;
    Ok(crate::numerics::dot(&u.values, &v.values) * u.spec.cell_volume())
}

/// Squared `|·|_{h,0}` norm of a raw value slice on `spec`.
pub(crate) fn l2_norm_sq(spec: &GridSpec, values: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in values {
        acc.add(x * x);
    }
    acc.value() * spec.cell_volume()
}

/// Discrete Sobolev norm `|v|_{h,m}` built from forward differences, `m ≤ 2`.
pub fn sobolev_norm(v: &GridFn, m: usize) -> Result<f64, GridError> {
    Ok(sobolev_norm_sq(v, m)?.sqrt())
}

pub fn sobolev_norm_sq(v: &GridFn, m: usize) -> Result<f64, GridError> {
    if m > MAX_ORDER {
        return Err(GridError::OrderTooHigh { order: m });
    }
    let mut acc = CompensatedSum::new();
    for alpha in MultiIndex::all_up_to(v.spec.dim, m) {
        let d = multi_diff(v, &alpha, Sign::Forward)?;
        for x in &d.values {
            acc.add(x * x);
        }
    }
    Ok(acc.value() * v.spec.cell_volume())
}

/// Restriction `R_h u`: evaluate `u` at every lattice point.
pub fn restrict<F>(u: F, spec: &GridSpec) -> Result<GridFn, GridError>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = vec![0.0; spec.dim];
    let mut values = Vec::with_capacity(spec.len());
    for idx in 0..spec.len() {
        spec.point_into(idx, &mut x);
        let value = u(&x);
        if !value.is_finite() {
            return Err(GridError::NonFinite {
                point: x.clone(),
                value,
            });
        }
        values.push(value);
    }
    Ok(GridFn {
        spec: *spec,
        values,
    })
}

/// Explicit inverse-inequality constant `κ(d) = √(1 + 4d)`.
///
/// Every one-sided difference satisfies `|δ_i w|_{h,0} ≤ (2/h)|w|_{h,0}`, so
/// `|v|_{h,m}^2 ≤ |v|_{h,0}^2 + (4d/h^2)|v|_{h,m-1}^2 ≤ ((1 + 4d)/h^2)|v|_{h,m-1}^2`
/// for `m ∈ {1, 2}` and `h ≤ 1`.
pub fn inverse_constant(dim: usize) -> f64 {
    (1.0 + 4.0 * dim as f64).sqrt()
}

/// `h |v|_{h,m} / |v|_{h,m-1}`, bounded above by [`inverse_constant`].
pub fn inverse_inequality_ratio(v: &GridFn, m: usize) -> Result<f64, GridError> {
    if m == 0 || m > MAX_ORDER {
        return Err(GridError::OrderTooHigh { order: m });
    }
    let lower = sobolev_norm(v, m - 1)?;
    if lower == 0.0 {
        return Err(GridError::ZeroFunction);
    }
    Ok(v.spec.h() * sobolev_norm(v, m)? / lower)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn line(values: &[f64]) -> GridFn {
        GridFn::new(GridSpec::new(1, values.len()).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(GridSpec::new(0, 4), Err(GridError::ZeroDimension)));
        assert!(matches!(GridSpec::new(1, 1), Err(GridError::TooFewPoints(1))));
        assert!(matches!(
            GridSpec::new(8, usize::MAX / 4),
            Err(GridError::TooLarge { .. })
        ));
    }

    #[test]
    fn two_point_differences_wrap() {
        let v = line(&[0.0, 1.0]);
        assert_eq!(diff(&v, 0, Sign::Forward).unwrap().values(), &[2.0, -2.0]);
        assert_eq!(diff(&v, 0, Sign::Backward).unwrap().values(), &[-2.0, 2.0]);
    }

    #[test]
    fn differences_of_constants_vanish() {
        let spec = GridSpec::new(2, 5).unwrap();
        let c = GridFn::constant(spec, 3.25);
        for axis in 0..2 {
            for sign in [Sign::Forward, Sign::Backward] {
                assert!(diff(&c, axis, sign).unwrap().values().iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn axis_out_of_range() {
        let v = line(&[0.0, 1.0]);
        assert!(matches!(
            diff(&v, 1, Sign::Forward),
            Err(GridError::AxisOutOfRange { axis: 1, dim: 1 })
        ));
    }

    #[test]
    fn zero_multi_index_is_identity() {
        let v = line(&[0.3, -1.0, 2.0]);
        assert_eq!(multi_diff(&v, &MultiIndex::zero(1), Sign::Backward).unwrap(), v);
    }

    #[test]
    fn multi_index_order_capped() {
        assert!(matches!(
            MultiIndex::new(vec![2, 1]),
            Err(GridError::OrderTooHigh { order: 3 })
        ));
        let all = MultiIndex::all_up_to(2, 2);
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], MultiIndex::zero(2));
    }

    #[test]
    fn second_difference_of_sine_on_four_points() {
        let spec = GridSpec::new(1, 4).unwrap();
        let v = restrict(|x| (2.0 * PI * x[0]).sin(), &spec).unwrap();
        let forward = diff(&v, 0, Sign::Forward).unwrap();
        let lap = diff(&forward, 0, Sign::Backward).unwrap();
        // Direct 3-point stencil (v(z+h) - 2v(z) + v(z-h)) / h^2.
        let h = 0.25;
        let raw = v.values();
        for i in 0..4 {
            let stencil = (raw[(i + 1) % 4] - 2.0 * raw[i] + raw[(i + 3) % 4]) / (h * h);
            assert_relative_eq!(lap.values()[i], stencil, epsilon = 1e-12);
            assert_relative_eq!(lap.values()[i], -32.0 * raw[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn mixed_differences_commute() {
        let spec = GridSpec::new(2, 6).unwrap();
        let v = restrict(|x| (2.0 * PI * x[0]).sin() * (4.0 * PI * x[1]).cos() + x[0], &spec).unwrap();
        let xy = diff(&diff(&v, 0, Sign::Forward).unwrap(), 1, Sign::Forward).unwrap();
        let yx = diff(&diff(&v, 1, Sign::Forward).unwrap(), 0, Sign::Forward).unwrap();
        let alpha = MultiIndex::new(vec![1, 1]).unwrap();
        let md = multi_diff(&v, &alpha, Sign::Forward).unwrap();
        for ((a, b), c) in xy.values().iter().zip(yx.values()).zip(md.values()) {
            assert_relative_eq!(a, b, epsilon = 1e-10);
            assert_relative_eq!(a, c, epsilon = 1e-10);
        }
    }

    #[test]
    fn norm_examples() {
        let v = line(&[0.0, 1.0]);
        assert_relative_eq!(sobolev_norm(&v, 0).unwrap(), 0.5_f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(sobolev_norm(&v, 1).unwrap(), 4.5_f64.sqrt(), epsilon = 1e-15);
        let c = GridFn::constant(GridSpec::new(2, 4).unwrap(), -2.5);
        for m in 0..=2 {
            assert_relative_eq!(sobolev_norm(&c, m).unwrap(), 2.5, epsilon = 1e-14);
        }
        assert!(matches!(sobolev_norm(&c, 3), Err(GridError::OrderTooHigh { order: 3 })));
    }

    #[test]
    fn inner_product_examples() {
        let u = line(&[1.0, 0.0, 0.0, 0.0]);
        let v = line(&[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(inner_product(&u, &v).unwrap(), 0.0);
        let ones = GridFn::constant(*u.spec(), 1.0);
        let c = GridFn::constant(*u.spec(), 0.7);
        assert_relative_eq!(inner_product(&ones, &c).unwrap(), 0.7, epsilon = 1e-15);
        let w = line(&[0.2, -1.5, 3.0, 0.25]);
        assert_relative_eq!(
            inner_product(&w, &w).unwrap(),
            sobolev_norm(&w, 0).unwrap().powi(2),
            epsilon = 1e-14
        );
        let other = line(&[0.0, 1.0]);
        assert!(matches!(inner_product(&u, &other), Err(GridError::GridMismatch { .. })));
    }

    #[test]
    fn restriction_examples() {
        let spec = GridSpec::new(1, 4).unwrap();
        let s = restrict(|x| (2.0 * PI * x[0]).sin(), &spec).unwrap();
        for (a, b) in s.values().iter().zip([0.0, 1.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let id = restrict(|x| x[0], &GridSpec::new(1, 2).unwrap()).unwrap();
        assert_eq!(id.values(), &[0.0, 0.5]);
        let ones = restrict(|_| 1.0, &GridSpec::new(3, 3).unwrap()).unwrap();
        assert!(ones.values().iter().all(|&x| x == 1.0));
        assert!(matches!(
            restrict(|x| 1.0 / x[0], &spec),
            Err(GridError::NonFinite { .. })
        ));
    }

    #[test]
    fn inverse_ratio_examples() {
        let spike = line(&[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(
            inverse_inequality_ratio(&spike, 1).unwrap(),
            2.0625_f64.sqrt(),
            epsilon = 1e-14
        );
        let c = GridFn::constant(GridSpec::new(1, 8).unwrap(), 2.0);
        assert_relative_eq!(inverse_inequality_ratio(&c, 1).unwrap(), 0.125, epsilon = 1e-15);
        let z = GridFn::zeros(GridSpec::new(1, 8).unwrap());
        assert!(matches!(inverse_inequality_ratio(&z, 1), Err(GridError::ZeroFunction)));
    }

    #[test]
    fn subsample_picks_coarse_points() {
        let fine = GridSpec::new(2, 8).unwrap();
        let coarse = GridSpec::new(2, 4).unwrap();
        let f = |x: &[f64]| x[0] * 10.0 + x[1];
        let sub = restrict(f, &fine).unwrap().subsample(&coarse).unwrap();
        assert_eq!(sub, restrict(f, &coarse).unwrap());
        assert!(restrict(f, &coarse).unwrap().subsample(&fine).is_err());
    }

    #[test]
    fn shift_wraps() {
        let spec = GridSpec::new(2, 3).unwrap();
        // idx 2 = (0, 2)
        assert_eq!(spec.shift(2, 1, 1), 0);
        assert_eq!(spec.shift(2, 0, -1), 8);
        assert_eq!(spec.point(5), vec![1.0 / 3.0, 2.0 / 3.0]);
    }
}
