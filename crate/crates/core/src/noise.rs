//! Brownian increments on the finest time partition of a study.
//!
//! Entry `(i, k)` of a [`WienerPath`] is `W^k(t_{i+1}) - W^k(t_i)`. It is a
//! pure function of `(seed, k, i)`: component `k` reads ChaCha8 stream `k`
//! keyed by `seed`, and step `i` consumes the four 32-bit words starting at
//! word position `4i` (two 64-bit draws fed to Box–Muller). Generation order
//! therefore does not matter.
//!
//! Increments are rounded to multiples of [`INCREMENT_QUANTUM`] so that every
//! partial sum of them is exact in f64. Coarsening by summation and
//! evaluation of `W(t)` then give identical bits regardless of association
//! order, which is what lets every resolution of a study share one path.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::splitmix64;

/// Grid to which increments are rounded (2^-36 ≈ 1.5e-11).
pub const INCREMENT_QUANTUM: f64 = 1.0 / (1u64 << 36) as f64;
/// Partial sums stay exact while their magnitude is below 2^(53-36).
const EXACT_SUM_LIMIT: f64 = (1u64 << 17) as f64;

pub const PATH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("malformed path file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    noise_dim: usize,
    steps: usize,
    horizon: f64,
    seed: u64,
    increments: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub d1: usize,
    pub m_fine: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Seed of Monte Carlo replica `replica` under master seed `seed`:
/// `splitmix64(seed ^ splitmix64(replica))`.
pub fn replica_seed(seed: u64, replica: u64) -> u64 {
    splitmix64(seed ^ splitmix64(replica))
}

#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn unit_closed_open(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
fn quantize(x: f64) -> f64 {
    (x / INCREMENT_QUANTUM).round() * INCREMENT_QUANTUM
}

fn component_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

/// Standard normal draw from the next two 64-bit outputs of `rng`.
fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_closed_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

impl WienerPath {
    pub fn sample(seed: u64, noise_dim: usize, steps: usize, horizon: f64) -> Result<Self, NoiseError> {
        if steps == 0 {
            return Err(NoiseError::Invalid("a path needs at least one step".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(NoiseError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        let sd = (horizon / steps as f64).sqrt();
        let mut increments = vec![0.0; steps * noise_dim];
        for k in 0..noise_dim {
            let mut rng = component_rng(seed, k);
            let mut total_abs = 0.0;
            for i in 0..steps {
                let dw = quantize(sd * box_muller(&mut rng));
                total_abs += dw.abs();
                increments[i * noise_dim + k] = dw;
            }
            if total_abs >= EXACT_SUM_LIMIT {
                return Err(NoiseError::Invalid(format!(
                    "path too long for exact partial sums (Σ|dW| = {total_abs})"
                )));
            }
        }
        Ok(Self {
            noise_dim,
            steps,
            horizon,
            seed,
            increments,
        })
    }

    /// Builds a path from explicit increments, row-major `[step][k]`.
    /// Values are used as given (no quantization).
    pub fn from_increments(seed: u64, noise_dim: usize, horizon: f64, increments: Vec<f64>) -> Result<Self, NoiseError> {
        if noise_dim == 0 || increments.is_empty() || !increments.len().is_multiple_of(noise_dim) {
            return Err(NoiseError::Invalid(format!(
                "{} increments do not form whole steps of {noise_dim} components",
                increments.len()
            )));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(NoiseError::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self {
            noise_dim,
            steps: increments.len() / noise_dim,
            horizon,
            seed,
            increments,
        })
    }

    /// A path with all increments zero (deterministic problems).
    pub fn zero(noise_dim: usize, steps: usize, horizon: f64) -> Self {
        Self {
            noise_dim,
            steps,
            horizon,
            seed: 0,
            increments: vec![0.0; steps * noise_dim],
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tau(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `W(t_{i+1}) - W(t_i)` for every component.
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.noise_dim..(i + 1) * self.noise_dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Coarse path with `steps / factor` increments, each the left-to-right
    /// sum of `factor` consecutive fine increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self, NoiseError> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(NoiseError::Invalid(format!(
                "factor {factor} does not divide {} steps",
                self.steps
            )));
        }
        let coarse_steps = self.steps / factor;
        let mut increments = vec![0.0; coarse_steps * self.noise_dim];
        for j in 0..coarse_steps {
            for i in j * factor..(j + 1) * factor {
                for k in 0..self.noise_dim {
                    increments[j * self.noise_dim + k] += self.increments[i * self.noise_dim + k];
                }
            }
        }
        Ok(Self {
            noise_dim: self.noise_dim,
            steps: coarse_steps,
            horizon: self.horizon,
            seed: self.seed,
            increments,
        })
    }

    /// Path with exactly `steps` increments.
    pub fn coarsen_to(&self, steps: usize) -> Result<Self, NoiseError> {
        if steps == 0 || !self.steps.is_multiple_of(steps) {
            return Err(NoiseError::Invalid(format!(
                "{steps} steps are not nested in {} fine steps",
                self.steps
            )));
        }
        self.coarsen(self.steps / steps)
    }

    /// `W^k(t_i)` for `i = 0..=steps`.
    pub fn cumulative(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps + 1);
        let mut w = 0.0;
        out.push(w);
        for i in 0..self.steps {
            w += self.increments[i * self.noise_dim + k];
            out.push(w);
        }
        out
    }

    /// `W(T)` for every component.
    pub fn terminal(&self) -> Vec<f64> {
        (0..self.noise_dim)
            .map(|k| *self.cumulative(k).last().expect("non-empty"))
            .collect()
    }

    pub fn header(&self) -> PathHeader {
        PathHeader {
            schema_version: PATH_SCHEMA_VERSION,
            seed: self.seed,
            d1: self.noise_dim,
            m_fine: self.steps,
            horizon: self.horizon,
        }
    }

    /// Writes `<base>.json` and `<base>.bin` (little-endian f64, `[step][k]`).
    pub fn write(&self, base: &Path) -> Result<(), NoiseError> {
        let header = serde_json::to_string_pretty(&self.header()).map_err(|e| NoiseError::Format(e.to_string()))?;
        fs::write(base.with_extension("json"), header)?;
        fs::write(base.with_extension("bin"), crate::grid::io::encode_f64le(&self.increments))?;
        Ok(())
    }

    pub fn read(base: &Path) -> Result<Self, NoiseError> {
        let header: PathHeader = serde_json::from_slice(&fs::read(base.with_extension("json"))?)
            .map_err(|e| NoiseError::Format(e.to_string()))?;
        if header.schema_version != PATH_SCHEMA_VERSION {
            return Err(NoiseError::Format(format!(
                "unsupported schema_version {}",
                header.schema_version
            )));
        }
        let increments = crate::grid::io::decode_f64le(&fs::read(base.with_extension("bin"))?)
            .map_err(|e| NoiseError::Format(e.to_string()))?;
        if increments.len() != header.m_fine * header.d1 {
            return Err(NoiseError::Format(format!(
                "expected {} increments, found {}",
                header.m_fine * header.d1,
                increments.len()
            )));
        }
        Ok(Self {
            noise_dim: header.d1,
            steps: header.m_fine,
            horizon: header.horizon,
            seed: header.seed,
            increments,
        })
    }
}
