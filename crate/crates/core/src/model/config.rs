//! JSON problem files.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "d": 1, "d1": 1, "T": 0.1,
//!   "a": [{"alpha": 1, "beta": 1, "coefficient": {"kind": "constant", "value": 1.0}}],
//!   "b": [{"k": 1, "alpha": 1, "coefficient": {"kind": "constant", "value": 1.0}}],
//!   "nonlinearity": {"kind": "none"},
//!   "u0": {"kind": "trig", "amplitude": 1.0, "wavenumbers": [1]}
//! }
//! ```
//!
//! Multi-index slots are `0` for the identity and `i ∈ 1..=d` for the first
//! derivative along axis `i`; noise components `k` run over `1..=d1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CoefficientField, DiffIndex, ModelError, Nonlinearity, ProblemSpec, TimeHoelder, TrigField};

pub const PROBLEM_SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    PROBLEM_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientConfig {
    Disabled,
    Constant {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_hoelder: Option<TimeHoelder>,
    },
    Trig {
        #[serde(default)]
        mean: f64,
        #[serde(default)]
        amplitude: f64,
        wavenumbers: Vec<i32>,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        omega: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time_hoelder: Option<TimeHoelder>,
    },
}

impl CoefficientConfig {
    pub fn constant(value: f64) -> Self {
        CoefficientConfig::Constant {
            value,
            time_hoelder: None,
        }
    }

    fn to_field(&self, dim: usize) -> Result<Option<CoefficientField>, ModelError> {
        Ok(match self {
            CoefficientConfig::Disabled => None,
            CoefficientConfig::Constant { value, time_hoelder } => {
                let mut f = CoefficientField::constant(*value);
                if let Some(h) = time_hoelder {
                    f = f.with_time_hoelder(h.exponent, h.constant);
                }
                Some(f)
            }
            CoefficientConfig::Trig {
                mean,
                amplitude,
                wavenumbers,
                phase,
                omega,
                time_hoelder,
            } => {
                if wavenumbers.len() != dim {
                    return Err(ModelError::Config(format!(
                        "trig coefficient has {} wavenumbers, expected d = {dim}",
                        wavenumbers.len()
                    )));
                }
                let mut f = CoefficientField::trig(TrigField {
                    mean: *mean,
                    amplitude: *amplitude,
                    wavenumbers: wavenumbers.clone(),
                    phase: *phase,
                    omega: *omega,
                });
                if let Some(h) = time_hoelder {
                    f = f.with_time_hoelder(h.exponent, h.constant);
                }
                Some(f)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftEntry {
    pub alpha: usize,
    pub beta: usize,
    pub coefficient: CoefficientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionEntry {
    pub k: usize,
    pub alpha: usize,
    pub coefficient: CoefficientConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseForcingEntry {
    pub k: usize,
    pub coefficient: CoefficientConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NonlinearityConfig {
    #[default]
    None,
    Sine,
    SmoothClip {
        #[serde(default = "one")]
        scale: f64,
    },
    Linear {
        c: f64,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConfig {
    Constant {
        value: f64,
    },
    /// `mean + amplitude * sin(2π k·x + phase)`.
    Trig {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        amplitude: f64,
        wavenumbers: Vec<i32>,
        #[serde(default)]
        phase: f64,
    },
    Sum {
        terms: Vec<InitialConfig>,
    },
}

impl InitialConfig {
    fn validate(&self, dim: usize) -> Result<(), ModelError> {
        match self {
            InitialConfig::Constant { .. } => Ok(()),
            InitialConfig::Trig { wavenumbers, .. } if wavenumbers.len() != dim => Err(ModelError::Config(
                format!("u0 has {} wavenumbers, expected d = {dim}", wavenumbers.len()),
            )),
            InitialConfig::Trig { .. } => Ok(()),
            InitialConfig::Sum { terms } => terms.iter().try_for_each(|t| t.validate(dim)),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            InitialConfig::Constant { value } => *value,
            InitialConfig::Trig {
                mean,
                amplitude,
                wavenumbers,
                phase,
            } => {
                let kx: f64 = wavenumbers.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
                mean + amplitude * (2.0 * PI * kx + phase).sin()
            }
            InitialConfig::Sum { terms } => terms.iter().map(|t| t.eval(x)).sum(),
        }
    }
}

/// Serializable problem definition covering the built-in coefficient,
/// nonlinearity and initial-condition registries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub d: usize,
    pub d1: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(default)]
    pub a: Vec<DriftEntry>,
    #[serde(default)]
    pub b: Vec<DiffusionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<CoefficientConfig>,
    #[serde(default)]
    pub g: Vec<NoiseForcingEntry>,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    pub u0: InitialConfig,
}

fn slot(index: usize, dim: usize) -> Result<DiffIndex, ModelError> {
    match index {
        0 => Ok(DiffIndex::Zero),
        i if i <= dim => Ok(DiffIndex::Axis(i - 1)),
        i => Err(ModelError::Config(format!("multi-index slot {i} out of range 0..={dim}"))),
    }
}

fn noise_index(k: usize, d1: usize) -> Result<usize, ModelError> {
    if (1..=d1).contains(&k) {
        Ok(k - 1)
    } else {
        Err(ModelError::Config(format!("noise index {k} out of range 1..={d1}")))
    }
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let cfg: ProblemConfig = serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        if cfg.schema_version != PROBLEM_SCHEMA_VERSION {
            return Err(ModelError::Config(format!(
                "unsupported schema_version {}",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn fingerprint(&self) -> String {
        let compact = serde_json::to_string(self).expect("problem config serializes");
        let digest = Sha256::digest(compact.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn build(&self) -> Result<ProblemSpec, ModelError> {
        let dim = self.d;
        let mut builder = ProblemSpec::builder(dim, self.d1, self.horizon);
        for entry in &self.a {
            if let Some(field) = entry.coefficient.to_field(dim)? {
                builder = builder.drift(slot(entry.alpha, dim)?, slot(entry.beta, dim)?, field);
            }
        }
        for entry in &self.b {
            if let Some(field) = entry.coefficient.to_field(dim)? {
                builder = builder.diffusion(noise_index(entry.k, self.d1)?, slot(entry.alpha, dim)?, field);
            }
        }
        if let Some(f) = &self.f {
            if let Some(field) = f.to_field(dim)? {
                builder = builder.forcing(field);
            }
        }
        for entry in &self.g {
            if let Some(field) = entry.coefficient.to_field(dim)? {
                builder = builder.noise_forcing(noise_index(entry.k, self.d1)?, field);
            }
        }
        match &self.nonlinearity {
            NonlinearityConfig::None => {}
            NonlinearityConfig::Sine => builder = builder.nonlinearity(Nonlinearity::sine()),
            NonlinearityConfig::SmoothClip { scale } => {
                builder = builder.nonlinearity(Nonlinearity::smooth_clip(*scale)?)
            }
            NonlinearityConfig::Linear { c } => builder = builder.nonlinearity(Nonlinearity::linear(*c)?),
        }
        self.u0.validate(dim)?;
        let u0 = self.u0.clone();
        builder
            .initial(move |x| u0.eval(x))
            .fingerprint(self.fingerprint())
            .build()
    }

    /// Transport-noise problem `du = u_xx dt + b u_x dW`, `u0 = sin(2πx)`,
    /// which has a closed-form pathwise solution.
    pub fn oracle(b: f64, horizon: f64) -> Self {
        ProblemConfig {
            schema_version: PROBLEM_SCHEMA_VERSION,
            d: 1,
            d1: 1,
            horizon,
            a: vec![DriftEntry {
                alpha: 1,
                beta: 1,
                coefficient: CoefficientConfig::constant(1.0),
            }],
            b: vec![DiffusionEntry {
                k: 1,
                alpha: 1,
                coefficient: CoefficientConfig::constant(b),
            }],
            f: None,
            g: Vec::new(),
            nonlinearity: NonlinearityConfig::None,
            u0: InitialConfig::Trig {
                mean: 0.0,
                amplitude: 1.0,
                wavenumbers: vec![1],
                phase: 0.0,
            },
        }
    }

    /// Deterministic heat equation `u_t = u_xx` with `u0 = sin(2πx)`.
    pub fn heat(horizon: f64) -> Self {
        let mut cfg = Self::oracle(0.0, horizon);
        cfg.b.clear();
        cfg
    }

    /// The transport coefficient `b` if this file describes the closed-form
    /// oracle problem (`b = 0`, or no noise coefficient, is the heat case).
    pub fn oracle_coefficient(&self) -> Option<f64> {
        let reference = Self::oracle(0.0, self.horizon);
        let active_a: Vec<&DriftEntry> = self
            .a
            .iter()
            .filter(|e| e.coefficient != CoefficientConfig::Disabled)
            .collect();
        if self.d != 1
            || self.d1 > 1
            || active_a.len() != 1
            || active_a[0] != &reference.a[0]
            || self.f.as_ref().is_some_and(|f| *f != CoefficientConfig::Disabled)
            || self.g.iter().any(|g| g.coefficient != CoefficientConfig::Disabled)
            || self.nonlinearity != NonlinearityConfig::None
            || self.u0 != reference.u0
        {
            return None;
        }
        let mut b = 0.0;
        for entry in &self.b {
            match (&entry.coefficient, entry.alpha) {
                (CoefficientConfig::Disabled, _) => {}
                (CoefficientConfig::Constant { value, .. }, 1) => b = *value,
                _ => return None,
            }
        }
        Some(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"{
          "schema_version": 1,
          "d": 1, "d1": 1, "T": 0.1,
          "a": [{"alpha": 1, "beta": 1, "coefficient": {"kind": "constant", "value": 1.0}}],
          "b": [{"k": 1, "alpha": 1, "coefficient": {"kind": "constant", "value": 1.0}}],
          "nonlinearity": {"kind": "none"},
          "u0": {"kind": "trig", "amplitude": 1.0, "wavenumbers": [1]}
        }"#;
        let cfg = ProblemConfig::from_json(text).unwrap();
        assert_eq!(cfg, ProblemConfig::oracle(1.0, 0.1));
        assert_eq!(cfg.oracle_coefficient(), Some(1.0));
        let spec = cfg.build().unwrap();
        assert_eq!(spec.fingerprint(), Some(cfg.fingerprint().as_str()));
        assert!((spec.initial_value(&[0.25]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn registry_variants_build() {
        let mut cfg = ProblemConfig::oracle(0.5, 1.0);
        cfg.nonlinearity = NonlinearityConfig::SmoothClip { scale: 2.0 };
        cfg.f = Some(CoefficientConfig::Trig {
            mean: 0.0,
            amplitude: 1.0,
            wavenumbers: vec![2],
            phase: 0.0,
            omega: 3.0,
            time_hoelder: Some(TimeHoelder {
                exponent: 0.5,
                constant: 3.0,
            }),
        });
        cfg.g.push(NoiseForcingEntry {
            k: 1,
            coefficient: CoefficientConfig::constant(0.2),
        });
        let spec = cfg.build().unwrap();
        assert_eq!(spec.nonlinearity().unwrap().name(), "smooth_clip");
        assert_eq!(spec.forcing().unwrap().time_hoelder().unwrap().exponent, 0.5);
        assert!(spec.noise_forcing(0).is_some());
        assert_eq!(cfg.oracle_coefficient(), None);
        let back = ProblemConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.fingerprint(), cfg.fingerprint());
    }

    #[test]
    fn rejects_bad_indices_and_schema() {
        let mut cfg = ProblemConfig::oracle(1.0, 0.1);
        cfg.b[0].k = 2;
        assert!(matches!(cfg.build(), Err(ModelError::Config(_))));
        let mut cfg = ProblemConfig::oracle(1.0, 0.1);
        cfg.a[0].alpha = 2;
        assert!(matches!(cfg.build(), Err(ModelError::Config(_))));
        let mut cfg = ProblemConfig::oracle(1.0, 0.1);
        cfg.schema_version = 9;
        assert!(ProblemConfig::from_json(&cfg.to_json()).is_err());
        assert!(ProblemConfig::from_json(r#"{"d":1,"d1":0,"T":1,"u0":{"kind":"constant","value":0},"extra":1}"#).is_err());
    }

    #[test]
    fn heat_is_oracle_with_zero_noise() {
        assert_eq!(ProblemConfig::heat(0.1).oracle_coefficient(), Some(0.0));
    }
}
