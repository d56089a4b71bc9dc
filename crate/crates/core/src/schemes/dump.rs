//! Trajectory dumps: `manifest.json` plus one little-endian f64 frame per
//! state (`frame_000000.bin`, ...).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::io::{decode_f64le, encode_f64le};
use crate::grid::GridFn;

use super::{RunSummary, SchemeError, Trajectory};

pub const TRAJECTORY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub schema_version: u32,
    #[serde(flatten)]
    pub summary: RunSummary,
    pub frames: usize,
}

fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.bin")
}

pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<(), SchemeError> {
    fs::create_dir_all(dir)?;
    for (i, state) in traj.states.iter().enumerate() {
        fs::write(dir.join(frame_name(i)), encode_f64le(state.values()))?;
    }
    let manifest = TrajectoryManifest {
        schema_version: TRAJECTORY_SCHEMA_VERSION,
        summary: traj.summary.clone(),
        frames: traj.states.len(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| SchemeError::Format(e.to_string()))?;
    fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<Trajectory, SchemeError> {
    let manifest: TrajectoryManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)
        .map_err(|e| SchemeError::Format(e.to_string()))?;
    if manifest.schema_version != TRAJECTORY_SCHEMA_VERSION {
        return Err(SchemeError::Format(format!(
            "unsupported schema_version {}",
            manifest.schema_version
        )));
    }
    let grid = crate::grid::GridSpec::new(manifest.summary.d, manifest.summary.n)?;
    let states = (0..manifest.frames)
        .map(|i| {
            let bytes = fs::read(dir.join(frame_name(i)))?;
            let values = decode_f64le(&bytes)?;
            Ok(GridFn::new(grid, values)?)
        })
        .collect::<Result<Vec<_>, SchemeError>>()?;
    Ok(Trajectory {
        summary: manifest.summary,
        states,
    })
}
