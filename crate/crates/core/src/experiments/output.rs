//! Study artifacts: `study.csv` (one row per replica and level),
//! `summary.json` (per-level RMS, fits, certificates) and `plot.dat`
//! (log10 resolution against log10 RMS error, one block per sweep).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::study::{LevelSummary, ReferenceChoice, StudyResult, Sweep};
use super::ExperimentError;
use crate::schemes::SchemeKind;

pub const STUDY_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct CsvRow {
    schema_version: u32,
    kind: SchemeKind,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    h: f64,
    tau: f64,
    replica: usize,
    seed: u64,
    #[serde(rename = "sup_H_error")]
    sup_h_error: f64,
    #[serde(rename = "int_V_error_sq")]
    int_v_error_sq: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    schema_version: u32,
    kind: SchemeKind,
    seed: u64,
    replicas: usize,
    r: usize,
    reference: &'a ReferenceChoice,
    problem: Option<&'a str>,
    levels: &'a [LevelSummary],
    sweeps: &'a [Sweep],
}

fn out_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Output(e.to_string())
}

/// Writes the three study files into `dir` and returns their paths.
pub fn write_study(dir: &Path, study: &StudyResult) -> Result<Vec<PathBuf>, ExperimentError> {
    fs::create_dir_all(dir)?;

    let csv_path = dir.join("study.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(out_err)?;
    for rec in &study.records {
        writer
            .serialize(CsvRow {
                schema_version: STUDY_SCHEMA_VERSION,
                kind: study.kind,
                n: rec.n,
                m: rec.m,
                h: rec.h,
                tau: rec.tau,
                replica: rec.replica,
                seed: rec.seed,
                sup_h_error: rec.sup_h_error,
                int_v_error_sq: rec.int_v_error_sq,
                diverged: rec.diverged,
            })
            .map_err(out_err)?;
    }
    writer.flush()?;

    let json_path = dir.join("summary.json");
    let summary = SummaryFile {
        schema_version: STUDY_SCHEMA_VERSION,
        kind: study.kind,
        seed: study.seed,
        replicas: study.replicas,
        r: study.r,
        reference: &study.reference,
        problem: study.problem.as_deref(),
        levels: &study.levels,
        sweeps: &study.sweeps,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&summary).map_err(out_err)? + "\n")?;

    let plot_path = dir.join("plot.dat");
    let mut plot = format!("# schema_version {STUDY_SCHEMA_VERSION}\n# log10(resolution) log10(rms sup_H_error)\n");
    for (k, sweep) in study.sweeps.iter().enumerate() {
        if k > 0 {
            plot.push_str("\n\n");
        }
        let axis = serde_json::to_string(&sweep.axis).map_err(out_err)?;
        match &sweep.fit {
            Some(fit) => {
                let _ = writeln!(plot, "# sweep {} slope {}", axis.trim_matches('"'), fit.slope);
                for (p, e) in &fit.points {
                    let _ = writeln!(plot, "{} {}", p.log10(), e.log10());
                }
            }
            None => {
                let _ = writeln!(plot, "# sweep {} (no fit)", axis.trim_matches('"'));
            }
        }
    }
    fs::write(&plot_path, plot)?;
    Ok(vec![csv_path, json_path, plot_path])
}
