//! Reference solutions: the closed-form transport-diffusion mode and
//! fine-grid implicit runs, the latter optionally cached on disk.

use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use sha2::{Digest, Sha256};

use crate::grid::{restrict, GridFn, GridSpec};
use crate::model::ProblemSpec;
use crate::noise::WienerPath;
use crate::schemes::{read_trajectory, run, write_trajectory, SchemeConfig, SchemeKind, Trajectory};

use super::ExperimentError;

/// Pathwise solution of `du = u_xx dt + b u_x dW`, `u(0) = sin(2πx)`:
/// `exp(-4π²(1 - b²/2) t) sin(2π(x + b W_t))`.
pub fn exact_mode_solution(b: f64, t: f64, w: f64, x: f64) -> Result<f64, ExperimentError> {
    if !(b.abs() < SQRT_2) {
        return Err(ExperimentError::Domain(format!(
            "|b| = {} violates parabolicity (|b| < √2 required)",
            b.abs()
        )));
    }
    Ok((-4.0 * PI * PI * (1.0 - 0.5 * b * b) * t).exp() * (2.0 * PI * (x + b * w)).sin())
}

/// A solution known at the time levels of a run with `m` steps.
pub trait Reference: Sync {
    /// Reference at `t_i = i T/m`, restricted to `grid`.
    fn at(&self, i: usize, m: usize, grid: &GridSpec) -> Result<GridFn, ExperimentError>;
}

fn fine_index(i: usize, m: usize, fine_steps: usize) -> Result<usize, ExperimentError> {
    if m == 0 && i == 0 {
        return Ok(0);
    }
    if m == 0 || !fine_steps.is_multiple_of(m) || i > m {
        return Err(ExperimentError::NotNested(format!(
            "time level {i} of {m} steps is not a level of the {fine_steps}-step reference"
        )));
    }
    Ok(i * (fine_steps / m))
}

/// The closed-form mode driven by one Brownian path.
#[derive(Debug, Clone)]
pub struct OracleReference {
    b: f64,
    horizon: f64,
    /// `W(t_j)` on the path's own partition.
    w: Vec<f64>,
}

impl OracleReference {
    pub fn new(b: f64, path: &WienerPath) -> Result<Self, ExperimentError> {
        exact_mode_solution(b, 0.0, 0.0, 0.0)?;
        let w = if path.noise_dim() > 0 {
            path.cumulative(0)
        } else {
            vec![0.0; path.steps() + 1]
        };
        Ok(Self {
            b,
            horizon: path.horizon(),
            w,
        })
    }

    /// Deterministic heat mode (`b = 0`) on a partition of `steps` steps.
    pub fn heat(horizon: f64, steps: usize) -> Self {
        Self {
            b: 0.0,
            horizon,
            w: vec![0.0; steps + 1],
        }
    }

    pub fn fine_steps(&self) -> usize {
        self.w.len() - 1
    }
}

impl Reference for OracleReference {
    fn at(&self, i: usize, m: usize, grid: &GridSpec) -> Result<GridFn, ExperimentError> {
        if grid.dim() != 1 {
            return Err(ExperimentError::Invalid("the closed-form mode is one-dimensional".into()));
        }
        let j = fine_index(i, m, self.fine_steps())?;
        let t = if m == 0 {
            0.0
        } else if i == m {
            self.horizon
        } else {
            self.horizon * i as f64 / m as f64
        };
        let (b, w) = (self.b, self.w[j]);
        let decay = (-4.0 * PI * PI * (1.0 - 0.5 * b * b) * t).exp();
        Ok(restrict(|x| decay * (2.0 * PI * (x[0] + b * w)).sin(), grid)?)
    }
}

/// A stored fine trajectory; state `s` is the fine state at step `s·stride`.
#[derive(Debug, Clone)]
pub struct TrajectoryReference {
    states: Vec<GridFn>,
    stride: usize,
    fine_steps: usize,
}

impl TrajectoryReference {
    pub fn new(traj: Trajectory) -> Result<Self, ExperimentError> {
        if let Some(at) = traj.diverged() {
            return Err(ExperimentError::Numerical(format!("reference run diverged at step {at}")));
        }
        Ok(Self {
            fine_steps: traj.summary.config.m,
            states: traj.states,
            stride: 1,
        })
    }

    /// States already decimated: entry `s` is the state at fine step
    /// `s·stride` of a `fine_steps`-step run.
    pub fn from_decimated(states: Vec<GridFn>, stride: usize, fine_steps: usize) -> Result<Self, ExperimentError> {
        if stride == 0 || !fine_steps.is_multiple_of(stride) || states.len() != fine_steps / stride + 1 {
            return Err(ExperimentError::Invalid(format!(
                "{} states do not cover {fine_steps} steps at stride {stride}",
                states.len()
            )));
        }
        Ok(Self {
            states,
            stride,
            fine_steps,
        })
    }

    /// Keeps every `stride`-th state, subsampled to `keep`.
    pub fn decimated(traj: Trajectory, stride: usize, keep: &GridSpec) -> Result<Self, ExperimentError> {
        let m = traj.summary.config.m;
        if stride == 0 || !m.is_multiple_of(stride) {
            return Err(ExperimentError::NotNested(format!("stride {stride} does not divide {m}")));
        }
        let full = Self::new(traj)?;
        let states = full
            .states
            .iter()
            .step_by(stride)
            .map(|s| s.subsample(keep))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            states,
            stride,
            fine_steps: m,
        })
    }
}

impl Reference for TrajectoryReference {
    fn at(&self, i: usize, m: usize, grid: &GridSpec) -> Result<GridFn, ExperimentError> {
        let j = fine_index(i, m, self.fine_steps)?;
        if j % self.stride != 0 {
            return Err(ExperimentError::NotNested(format!(
                "fine step {j} was not kept (stride {})",
                self.stride
            )));
        }
        let state = &self.states[j / self.stride];
        if state.spec() == grid {
            Ok(state.clone())
        } else {
            state
                .subsample(grid)
                .map_err(|e| ExperimentError::NotNested(e.to_string()))
        }
    }
}

/// Cache directory name for a reference run.
pub fn cache_key(fingerprint: &str, seed: u64, grid: &GridSpec, m: usize, tag: &str) -> String {
    format!("{fingerprint}_{seed:016x}_d{}_N{}_m{m}{tag}", grid.dim(), grid.n())
}

fn checksum(dir: &Path, frames: usize) -> Result<String, std::io::Error> {
    let mut hasher = Sha256::new();
    hasher.update(fs::read(dir.join("manifest.json"))?);
    for i in 0..frames {
        hasher.update(fs::read(dir.join(format!("frame_{i:06}.bin")))?);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn load_cached(dir: &Path) -> Option<Trajectory> {
    let stored = fs::read_to_string(dir.join("checksum.sha256")).ok()?;
    let traj = read_trajectory(dir).ok()?;
    let actual = checksum(dir, traj.states.len()).ok()?;
    (stored.trim() == actual).then_some(traj)
}

/// Returns the trajectory cached under `dir`, or computes and stores it.
/// Missing, unreadable or checksum-mismatched caches are recomputed.
pub fn cached_trajectory<F>(dir: &Path, compute: F) -> Result<Trajectory, ExperimentError>
where
    F: FnOnce() -> Result<Trajectory, ExperimentError>,
{
    if dir.join("manifest.json").exists() {
        if let Some(traj) = load_cached(dir) {
            return Ok(traj);
        }
        warn!("reference cache {} is corrupt; recomputing", dir.display());
        fs::remove_dir_all(dir)?;
    }
    let traj = compute()?;
    write_trajectory(dir, &traj)?;
    fs::write(dir.join("checksum.sha256"), checksum(dir, traj.states.len())? + "\n")?;
    Ok(traj)
}

/// Implicit-scheme trajectory at the fine resolution, driven by `path`
/// (coarsened to `fine_cfg.m` steps if needed). With `cache`, the result is
/// stored under a key built from the problem fingerprint, path seed and
/// resolution.
pub fn reference_solution(
    spec: &ProblemSpec,
    fine_grid: GridSpec,
    fine_cfg: &SchemeConfig,
    path: &WienerPath,
    cache: Option<&Path>,
) -> Result<Trajectory, ExperimentError> {
    if fine_cfg.kind != SchemeKind::Implicit {
        return Err(ExperimentError::Invalid("reference runs use the implicit scheme".into()));
    }
    let compute = || -> Result<Trajectory, ExperimentError> {
        let path = if path.steps() == fine_cfg.m {
            path.clone()
        } else {
            path.coarsen_to(fine_cfg.m)?
        };
        let traj = run(spec, fine_grid, fine_cfg, &path)?;
        if let Some(at) = traj.diverged() {
            return Err(ExperimentError::Numerical(format!("reference run diverged at step {at}")));
        }
        Ok(traj)
    };
    match (cache, spec.fingerprint()) {
        (Some(root), Some(fp)) => {
            let dir: PathBuf = root.join(cache_key(fp, path.seed(), &fine_grid, fine_cfg.m, ""));
            cached_trajectory(&dir, compute)
        }
        (Some(_), None) => {
            warn!("problem has no fingerprint; reference not cached");
            compute()
        }
        (None, _) => compute(),
    }
}
