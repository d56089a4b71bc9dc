//! Finite-difference schemes for linear and quasilinear stochastic parabolic
//! equations on the periodic unit torus.
//!
//! The crate is organised bottom-up:
//!
//! - [`grid`]: periodic lattices, difference operators and discrete Sobolev norms;
//! - [`model`]: problem description, discretized operators and stability constants;
//! - [`noise`]: reproducible Brownian increments shared across resolutions;
//! - [`schemes`]: the implicit and explicit time steppers;
//! - [`experiments`]: reference solutions, error norms and convergence studies.

pub mod grid;
pub mod krylov;
pub mod model;
pub mod noise;
pub mod numerics;
pub mod schemes;
pub mod experiments;
pub mod sparse;

pub use grid::{GridError, GridFn, GridSpec, MultiIndex, Sign};
pub use model::{ModelError, ProblemSpec};
pub use noise::{NoiseError, WienerPath};
