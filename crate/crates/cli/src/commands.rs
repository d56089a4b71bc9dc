use std::fs;
use std::path::Path;

use serde::Serialize;
use spde_fd::experiments::{
    convergence_study, write_study, ErrorAccumulator, OracleReference, ReferenceChoice, StudyConfig, StudyResult,
    SweepAxis,
};
use spde_fd::grid::{sobolev_norm, write_grid_fn, GridFn, GridFnFormat, GridSpec};
use spde_fd::model::ProblemSpec;
use spde_fd::noise::WienerPath;
use spde_fd::schemes::{
    certify_explicit, implicit_step_limit, run, run_with, write_trajectory, RunSummary, SchemeConfig, SchemeKind,
};

use crate::manifest::{Resolved, MANIFEST_SCHEMA_VERSION};
use crate::CliError;

/// Outcome of a command that ran to completion.
pub enum Outcome {
    Pass,
    /// Some threshold or margin check failed.
    Fail,
}

fn build(res: &Resolved) -> Result<ProblemSpec, CliError> {
    res.problem.build().map_err(CliError::from)
}

fn scheme_config(res: &Resolved, kind: SchemeKind, m: usize, horizon: f64) -> SchemeConfig {
    let mut cfg = SchemeConfig::new(kind, m, horizon);
    cfg.q = res.q;
    if let Some(tol) = res.solver_tol {
        cfg.solver_tol = tol;
    }
    cfg
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

/// The effective manifest, minus the output directory so that reruns into
/// different directories produce identical files.
fn write_manifest(res: &Resolved, dir: &Path) -> Result<(), CliError> {
    let mut manifest = res.manifest.clone();
    manifest.schema_version = MANIFEST_SCHEMA_VERSION;
    manifest.out = None;
    write_json(&dir.join("manifest.json"), &manifest)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Serialize)]
struct CheckLevel {
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    h: f64,
    tau: f64,
    lambda: f64,
    l1: f64,
    l2: f64,
    kappa: f64,
    q: f64,
    margin: f64,
    explicit_certified: bool,
    /// `None` when the implicit step is unrestricted.
    implicit_limit: Option<f64>,
    implicit_admissible: bool,
}

#[derive(Serialize)]
struct CheckReport {
    schema_version: u32,
    problem: String,
    levels: Vec<CheckLevel>,
    pass: bool,
}

pub fn check(res: &Resolved) -> Result<Outcome, CliError> {
    let spec = build(res)?;
    let kinds = res.scheme.kinds();
    let mut levels = Vec::new();
    let mut pass = true;
    println!("problem {}", res.problem.fingerprint());
    for level in &res.levels {
        let grid = GridSpec::new(spec.dim(), level.n)?;
        let cfg = scheme_config(res, SchemeKind::Explicit, level.m, spec.horizon());
        let cert = certify_explicit(&spec, &grid, &cfg)?;
        let b = cert.budget;
        let limit = implicit_step_limit(&spec, &grid, &cfg);
        let tau = cfg.tau();
        let implicit_ok = tau < limit;
        println!(
            "N={} m={} h={:e} tau={:e} lambda={} L1={:e} L2={:e} kappa={} q={}",
            level.n,
            level.m,
            grid.h(),
            tau,
            b.lambda,
            b.l1,
            b.l2,
            b.kappa,
            b.q
        );
        if kinds.contains(&SchemeKind::Explicit) {
            println!("  explicit margin {:e} {}", cert.margin, verdict(cert.certified));
            pass &= cert.certified;
        }
        if kinds.contains(&SchemeKind::Implicit) {
            println!("  implicit gate tau < {:e} {}", limit, verdict(implicit_ok));
            pass &= implicit_ok;
        }
        levels.push(CheckLevel {
            n: level.n,
            m: level.m,
            h: grid.h(),
            tau,
            lambda: b.lambda,
            l1: b.l1,
            l2: b.l2,
            kappa: b.kappa,
            q: b.q,
            margin: cert.margin,
            explicit_certified: cert.certified,
            implicit_limit: limit.is_finite().then_some(limit),
            implicit_admissible: implicit_ok,
        });
    }
    if let Some(dir) = &res.out {
        write_manifest(res, dir)?;
        write_json(
            &dir.join("check.json"),
            &CheckReport {
                schema_version: MANIFEST_SCHEMA_VERSION,
                problem: res.problem.fingerprint(),
                levels,
                pass,
            },
        )?;
    }
    println!("check {}", verdict(pass));
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Serialize)]
struct SimulateRow {
    schema_version: u32,
    scheme: SchemeKind,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    seed: u64,
    diverged_step: Option<usize>,
    norm_h0: f64,
    norm_h1: f64,
    max_abs: f64,
    #[serde(rename = "sup_H_error")]
    sup_h_error: Option<f64>,
    #[serde(rename = "int_V_error_sq")]
    int_v_error_sq: Option<f64>,
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    schema_version: u32,
    problem: String,
    scheme: SchemeKind,
    #[serde(rename = "N")]
    n: usize,
    m: usize,
    norm_h0: f64,
    norm_h1: f64,
    #[serde(rename = "sup_H_error")]
    sup_h_error: Option<f64>,
    #[serde(rename = "int_V_error_sq")]
    int_v_error_sq: Option<f64>,
    run: &'a RunSummary,
}

pub fn simulate(res: &Resolved) -> Result<Outcome, CliError> {
    let spec = build(res)?;
    let out = res.out.as_ref().expect("resolved with an output directory");
    write_manifest(res, out)?;
    let oracle = res.problem.oracle_coefficient();
    let mut rows = Vec::new();
    let mut failure = None;
    for level in &res.levels {
        let grid = GridSpec::new(spec.dim(), level.n)?;
        let path = if level.m == 0 {
            WienerPath::zero(spec.noise_dim(), 0, spec.horizon())
        } else {
            WienerPath::sample(res.seed, spec.noise_dim(), level.m, spec.horizon())?
        };
        let reference = oracle.map(|b| OracleReference::new(b, &path)).transpose()?;
        for kind in res.scheme.kinds() {
            let cfg = scheme_config(res, kind, level.m, spec.horizon());
            let dir = out.join(format!("{kind}_N{}_m{}", level.n, level.m));
            fs::create_dir_all(&dir).map_err(|e| CliError::Config(e.to_string()))?;
            let mut acc = match &reference {
                Some(r) => Some(ErrorAccumulator::new(r, grid, kind, level.m, spec.horizon(), res.r)?),
                None => None,
            };
            let mut last: Option<GridFn> = None;
            let summary = if res.dump {
                let traj = run(&spec, grid, &cfg, &path)?;
                if let Some(acc) = acc.as_mut() {
                    for (i, u) in traj.states.iter().enumerate() {
                        acc.observe(i, u)?;
                    }
                }
                write_trajectory(&dir, &traj)?;
                last = traj.states.last().cloned();
                traj.summary
            } else {
                let mut err = None;
                let summary = run_with(&spec, grid, &cfg, &path, |i, u| {
                    if let Some(acc) = acc.as_mut() {
                        if let Err(e) = acc.observe(i, u) {
                            err.get_or_insert(e);
                        }
                    }
                    last = Some(u.clone());
                    Ok(())
                })?;
                if let Some(e) = err {
                    return Err(e.into());
                }
                summary
            };
            let last = last.expect("a run records its initial state");
            write_grid_fn(&dir.join("final"), &last, GridFnFormat::F64Le)?;
            let report = acc.map(|a| a.finish(&summary, 0));
            let (norm_h0, norm_h1) = (sobolev_norm(&last, 0)?, sobolev_norm(&last, 1)?);
            write_json(
                &dir.join("summary.json"),
                &SimulateSummary {
                    schema_version: MANIFEST_SCHEMA_VERSION,
                    problem: res.problem.fingerprint(),
                    scheme: kind,
                    n: level.n,
                    m: level.m,
                    norm_h0,
                    norm_h1,
                    sup_h_error: report.as_ref().map(|r| r.sup_h_error),
                    int_v_error_sq: report.as_ref().map(|r| r.int_v_error_sq),
                    run: &summary,
                },
            )?;
            print!("{kind} N={} m={} |u_m|_h0={:e}", level.n, level.m, norm_h0);
            if let Some(r) = &report {
                print!(" sup_H_error={:e}", r.sup_h_error);
            }
            match summary.diverged {
                Some(step) => {
                    println!(" DIVERGED at step {step}");
                    failure.get_or_insert(CliError::Numerical(format!(
                        "{kind} run N={} m={} diverged at step {step}",
                        level.n, level.m
                    )));
                }
                None => println!(),
            }
            rows.push(SimulateRow {
                schema_version: MANIFEST_SCHEMA_VERSION,
                scheme: kind,
                n: level.n,
                m: level.m,
                seed: res.seed,
                diverged_step: summary.diverged,
                norm_h0,
                norm_h1,
                max_abs: last.max_abs(),
                sup_h_error: report.as_ref().map(|r| r.sup_h_error),
                int_v_error_sq: report.as_ref().map(|r| r.int_v_error_sq),
            });
        }
    }
    let csv_path = out.join("simulate.csv");
    let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Config(e.to_string()))?;
    for row in &rows {
        writer.serialize(row).map_err(|e| CliError::Config(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Config(e.to_string()))?;
    match failure {
        Some(e) => Err(e),
        None => Ok(Outcome::Pass),
    }
}

fn threshold(res: &Resolved, axis: SweepAxis) -> Option<f64> {
    match axis {
        SweepAxis::H => res.thresholds.h,
        SweepAxis::Tau => res.thresholds.tau,
        SweepAxis::Diagonal => res.thresholds.diagonal,
    }
}

fn report_study(res: &Resolved, study: &StudyResult) -> bool {
    let mut pass = true;
    for level in &study.levels {
        let flag = if level.excluded { " excluded" } else { "" };
        let margin = level
            .certificate
            .as_ref()
            .map(|c| format!(" margin={:e}", c.margin))
            .unwrap_or_default();
        println!(
            "{} N={} m={} rms_sup_H_error={:e} se={:e} diverged={}{margin}{flag}",
            study.kind, level.n, level.m, level.rms_sup_h_error, level.rms_sup_h_error_se, level.diverged_replicas
        );
    }
    for sweep in &study.sweeps {
        let min = threshold(res, sweep.axis);
        match (&sweep.fit, min) {
            (Some(fit), Some(min)) => {
                let ok = fit.slope >= min;
                pass &= ok;
                println!(
                    "{} {:?}-sweep order {:.4} (threshold {min}) {}",
                    study.kind,
                    sweep.axis,
                    fit.slope,
                    verdict(ok)
                );
            }
            (Some(fit), None) => println!("{} {:?}-sweep order {:.4}", study.kind, sweep.axis, fit.slope),
            (None, _) => {
                pass &= min.is_none();
                println!(
                    "{} {:?}-sweep no fit: {} {}",
                    study.kind,
                    sweep.axis,
                    sweep.note.as_deref().unwrap_or("too few levels"),
                    verdict(min.is_none())
                );
            }
        }
    }
    pass
}

pub fn study(res: &Resolved) -> Result<Outcome, CliError> {
    let spec = build(res)?;
    let out = res.out.as_ref().expect("resolved with an output directory");
    write_manifest(res, out)?;
    let reference = match (res.problem.oracle_coefficient(), res.reference) {
        (Some(b), None) => ReferenceChoice::Oracle { b },
        (_, fine) => {
            let n = res.levels.iter().map(|l| l.n).max().unwrap_or(0);
            let m = res.levels.iter().map(|l| l.m).max().unwrap_or(0);
            let fine = fine.map(|f| (f.n, f.m)).unwrap_or((4 * n, 4 * m));
            ReferenceChoice::Fine {
                n: fine.0,
                m: fine.1,
                cache: Some(out.join("reference_cache")),
            }
        }
    };
    let mut pass = true;
    for kind in res.scheme.kinds() {
        let mut cfg = StudyConfig::new(kind, res.levels.clone(), res.replicas, res.seed, reference.clone()).with_q(res.q);
        cfg.r = res.r;
        if let Some(tol) = res.solver_tol {
            cfg.solver_tol = tol;
        }
        let study = convergence_study(&spec, &cfg)?;
        write_study(&out.join(kind.to_string()), &study)?;
        pass &= report_study(res, &study);
    }
    println!("study {}", verdict(pass));
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}
