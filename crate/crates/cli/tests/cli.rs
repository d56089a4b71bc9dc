use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spde_fd::model::{CoefficientConfig, ProblemConfig};

/// Implicit oracle run, `b = 1`, N = 64, m = 1024, seed 7 (regression fixture).
const ORACLE_SIM_SUP_ERROR: f64 = 0.03718161110953007;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spde-fd"))
}

fn problem(dir: &Path, name: &str, cfg: &ProblemConfig) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, cfg.to_json()).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn heat_check_passes_with_positive_margins() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "heat.json", &ProblemConfig::heat(0.1));
    let out = run(&["check", "--problem", s(&p), "--scheme", "explicit", "--levels", "16:4096,32:16384"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert!(text.contains("lambda=1 "), "{text}");
    assert_eq!(text.matches("PASS").count(), 3, "{text}");
}

#[test]
fn parabolicity_failure_names_the_point() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "bad.json", &ProblemConfig::oracle(2f64.sqrt(), 0.1));
    let out = run(&["check", "--problem", s(&p), "--levels", "16:256"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("parabolicity fails") && err.contains("x = ["), "{err}");
}

#[test]
fn uncertified_level_fails_check_with_threshold_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(1.0, 0.1));
    let out = run(&["check", "--problem", s(&p), "--scheme", "explicit", "--q", "0.45", "--levels", "32:1024"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stdout(&out).contains("FAIL"));
}

#[test]
fn simulate_reports_the_oracle_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(1.0, 0.1));
    let out_dir = dir.path().join("out");
    let out = run(&[
        "simulate", "--problem", s(&p), "--levels", "64:1024", "--seed", "7", "--out", s(&out_dir), "--no-dump",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("implicit_N64_m1024/summary.json")).unwrap()).unwrap();
    let sup = summary["sup_H_error"].as_f64().unwrap();
    assert!((sup - ORACLE_SIM_SUP_ERROR).abs() <= 1e-9 * ORACLE_SIM_SUP_ERROR, "{sup}");
}

#[test]
fn simulate_without_steps_writes_only_the_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(0.5, 0.1));
    let out_dir = dir.path().join("out");
    let out = run(&["simulate", "--problem", s(&p), "--levels", "16:0", "--scheme", "both", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for kind in ["implicit", "explicit"] {
        let run_dir = out_dir.join(format!("{kind}_N16_m0"));
        let frames: Vec<_> = fs::read_dir(&run_dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("frame_"))
            .collect();
        assert_eq!(frames.len(), 1);
    }
}

#[test]
fn diverging_run_exits_with_numerical_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "heat.json", &ProblemConfig::heat(1.0));
    // τ/h² = 2.56: the checkerboard mode grows by ~9 per step from rounding.
    let out = run(&[
        "simulate", "--problem", s(&p), "--scheme", "explicit", "--levels", "16:100", "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("DIVERGED at step"));
}

#[test]
fn single_level_study_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(1.0, 0.1));
    let out = run(&["study", "--problem", s(&p), "--levels", "8:64", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 3 levels"));
}

#[test]
fn uncertified_study_level_is_flagged_and_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(1.0, 0.1));
    let out_dir = dir.path().join("o");
    let out = run(&[
        "study", "--problem", s(&p), "--scheme", "explicit", "--q", "0.45", "--replicas", "2", "--levels",
        "8:1024,16:4096,32:16384,64:32768", "--out", s(&out_dir),
    ]);
    let text = stdout(&out);
    assert!(text.contains("N=64 m=32768") && text.contains("excluded"), "{text}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("explicit/summary.json")).unwrap()).unwrap();
    let levels = summary["levels"].as_array().unwrap();
    let last = levels.iter().find(|l| l["N"] == 64).unwrap();
    assert_eq!(last["excluded"], true);
    assert_eq!(last["certificate"]["certified"], false);
    let sweep = &summary["sweeps"][0];
    assert_eq!(sweep["excluded"][0]["N"], 64);
    assert_eq!(sweep["fit"]["points"].as_array().unwrap().len(), 3);
}

#[test]
fn flags_override_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ProblemConfig::oracle(1.0, 0.1);
    cfg.b[0].coefficient = CoefficientConfig::constant(0.5);
    problem(dir.path(), "p.json", &cfg);
    let manifest = dir.path().join("run.json");
    fs::write(
        &manifest,
        r#"{"schema_version": 1, "problem": "p.json", "levels": "16:64", "seed": 3, "out": "from_manifest"}"#,
    )
    .unwrap();
    let out = run(&["simulate", "--manifest", s(&manifest), "--seed", "4", "--no-dump"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("from_manifest/simulate.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("1,implicit,16,64,4,"), "{csv}");
}

#[test]
fn bad_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("run.json");
    fs::write(&manifest, r#"{"schema_version": 9}"#).unwrap();
    assert_eq!(run(&["check", "--manifest", s(&manifest)]).status.code(), Some(1));
    fs::write(&manifest, r#"{"schema_version": 1, "problem": "missing.json", "levels": "8:8"}"#).unwrap();
    assert_eq!(run(&["check", "--manifest", s(&manifest)]).status.code(), Some(1));
}

#[test]
fn oracle_margin_matches_fourier_constants() {
    let dir = tempfile::tempdir().unwrap();
    let p = problem(dir.path(), "oracle.json", &ProblemConfig::oracle(1.0, 0.1));
    // τ = h²/10 at N = 32.
    let out = run(&["check", "--problem", s(&p), "--scheme", "explicit", "--levels", "32:1024", "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/check.json")).unwrap()).unwrap();
    // Top symbol μ = 4/h²: L1 = (μ/(1+μ))², L2 = μ/(1+μ); q = 0.9 λ = 0.45.
    let (n, tau) = (32.0_f64, 0.1 / 1024.0);
    let mu = 4.0 * n * n;
    let (l1, l2, kappa) = ((mu / (1.0 + mu)).powi(2), mu / (1.0 + mu), 5f64.sqrt());
    let margin = 0.45 - (l1 * kappa * kappa * tau * n * n + 2.0 * kappa * (l1 * l2 * tau).sqrt() * n);
    let level = &report["levels"][0];
    // Lanczos estimates are Rayleigh quotients: never above the true value,
    // and the top of this spectrum is tightly clustered.
    for (key, exact) in [("l1", l1), ("l2", l2)] {
        let est = level[key].as_f64().unwrap();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact * (1.0 - 1e-4), "{key}: {est} vs {exact}");
    }
    let reported = level["margin"].as_f64().unwrap();
    assert!((reported - margin).abs() <= 1e-4, "{level}");
    let (e1, e2) = (level["l1"].as_f64().unwrap(), level["l2"].as_f64().unwrap());
    let recomputed = 0.45 - (e1 * kappa * kappa * tau * n * n + 2.0 * kappa * (e1 * e2 * tau).sqrt() * n);
    assert!((reported - recomputed).abs() <= 1e-12);
    assert_eq!(level["explicit_certified"], false);
}
