//! On-disk form of a grid function: a JSON header `<base>.json` next to a
//! payload `<base>.bin` (little-endian f64) or `<base>.csv` (one value per
//! line, shortest round-trip formatting).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{GridError, GridFn, GridSpec};

pub const GRID_FN_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFnFormat {
    F64Le,
    Csv,
}

impl GridFnFormat {
    fn extension(self) -> &'static str {
        match self {
            GridFnFormat::F64Le => "bin",
            GridFnFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFnHeader {
    pub schema_version: u32,
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub format: GridFnFormat,
    pub count: usize,
}

fn with_extension(base: &Path, ext: &str) -> PathBuf {
    let mut name = base.as_os_str().to_owned();
    name.push(".");
    name.push(ext);
    PathBuf::from(name)
}

pub(crate) fn encode_f64le(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub(crate) fn decode_f64le(bytes: &[u8]) -> Result<Vec<f64>, GridError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(GridError::Format(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

/// Writes `<base>.json` and the payload file, returning the payload path.
pub fn write_grid_fn(base: &Path, v: &GridFn, format: GridFnFormat) -> Result<PathBuf, GridError> {
    let header = GridFnHeader {
        schema_version: GRID_FN_SCHEMA_VERSION,
        d: v.spec().dim(),
        n: v.spec().n(),
        format,
        count: v.values().len(),
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| GridError::Format(e.to_string()))?;
    fs::write(with_extension(base, "json"), json)?;
    let payload = with_extension(base, format.extension());
    match format {
        GridFnFormat::F64Le => fs::write(&payload, encode_f64le(v.values()))?,
        GridFnFormat::Csv => {
            let mut text = String::with_capacity(v.values().len() * 20);
            for x in v.values() {
                text.push_str(&format!("{x:?}\n"));
            }
            fs::write(&payload, text)?;
        }
    }
    Ok(payload)
}

pub fn read_grid_fn(base: &Path) -> Result<GridFn, GridError> {
    let header: GridFnHeader = serde_json::from_slice(&fs::read(with_extension(base, "json"))?)
        .map_err(|e| GridError::Format(e.to_string()))?;
    if header.schema_version != GRID_FN_SCHEMA_VERSION {
        return Err(GridError::Format(format!(
            "unsupported schema_version {}",
            header.schema_version
        )));
    }
    let spec = GridSpec::new(header.d, header.n)?;
    let payload = with_extension(base, header.format.extension());
    let values = match header.format {
        GridFnFormat::F64Le => decode_f64le(&fs::read(payload)?)?,
        GridFnFormat::Csv => fs::read_to_string(payload)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| GridError::Format(format!("bad value {l:?}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    if values.len() != header.count {
        return Err(GridError::Format(format!(
            "header announces {} values, payload holds {}",
            header.count,
            values.len()
        )));
    }
    GridFn::new(spec, values)
}
