use std::f64::consts::PI;

use approx::assert_relative_eq;

use super::*;
use crate::grid::GridSpec;
use crate::model::ProblemConfig;
use crate::noise::WienerPath;
use crate::schemes::{run, SchemeConfig};

#[test]
fn exact_mode_examples() {
    let x = 0.3;
    assert_relative_eq!(
        exact_mode_solution(0.0, 0.02, 0.7, x).unwrap(),
        (-4.0 * PI * PI * 0.02).exp() * (2.0 * PI * x).sin(),
        epsilon = 1e-15
    );
    assert_relative_eq!(
        exact_mode_solution(1.2, 0.0, 0.0, x).unwrap(),
        (2.0 * PI * x).sin(),
        epsilon = 1e-15
    );
    let v = exact_mode_solution(1.0, 0.01, 0.25, 0.0).unwrap();
    assert_relative_eq!(v, (-2.0 * PI * PI * 0.01).exp(), epsilon = 1e-15);
    assert!((v - 0.82087).abs() < 5e-6);
    assert!(matches!(
        exact_mode_solution(2.0_f64.sqrt(), 0.1, 0.0, 0.0),
        Err(ExperimentError::Domain(_))
    ));
}

/// Offsets the closed-form heat mode by a constant.
struct Shifted(OracleReference, f64);

impl Reference for Shifted {
    fn at(&self, i: usize, m: usize, grid: &GridSpec) -> Result<crate::grid::GridFn, ExperimentError> {
        let mut v = self.0.at(i, m, grid)?;
        v.values_mut().iter_mut().for_each(|x| *x += self.1);
        Ok(v)
    }
}

#[test]
fn error_norms_of_exact_and_shifted_reference() {
    let spec = ProblemConfig::heat(0.1).build().unwrap();
    let grid = GridSpec::new(1, 16).unwrap();
    let m = 10;
    let traj = run(&spec, grid, &SchemeConfig::implicit(m, 0.1), &WienerPath::zero(1, m, 0.1)).unwrap();
    // A reference that equals the trajectory at every step.
    let same = TrajectoryReference::new(traj.clone()).unwrap();
    let zero = error_norms(&same, &traj, 0).unwrap();
    assert_eq!((zero.sup_h_error, zero.int_v_error_sq), (0.0, 0.0));

    let c = 0.25;
    struct Plus(TrajectoryReference, f64);
    impl Reference for Plus {
        fn at(&self, i: usize, m: usize, grid: &GridSpec) -> Result<crate::grid::GridFn, ExperimentError> {
            let mut v = self.0.at(i, m, grid)?;
            v.values_mut().iter_mut().for_each(|x| *x += self.1);
            Ok(v)
        }
    }
    let shifted = error_norms(&Plus(same, c), &traj, 0).unwrap();
    assert_relative_eq!(shifted.sup_h_error, c, epsilon = 1e-14);
    assert_relative_eq!(shifted.int_v_error_sq, 0.1 * c * c, epsilon = 1e-14);
}

#[test]
fn shifted_oracle_is_positive() {
    let spec = ProblemConfig::heat(0.1).build().unwrap();
    let grid = GridSpec::new(1, 8).unwrap();
    let traj = run(&spec, grid, &SchemeConfig::implicit(4, 0.1), &WienerPath::zero(1, 4, 0.1)).unwrap();
    let report = error_norms(&Shifted(OracleReference::heat(0.1, 4), 1.0), &traj, 0).unwrap();
    assert!(report.sup_h_error > 0.9);
}

#[test]
fn explicit_heat_regression_fixture() {
    let spec = ProblemConfig::heat(0.1).build().unwrap();
    let grid = GridSpec::new(1, 16).unwrap();
    let m = 1024;
    let traj = run(&spec, grid, &SchemeConfig::explicit(m, 0.1), &WienerPath::zero(1, m, 0.1)).unwrap();
    assert!(traj.diverged().is_none());
    let report = error_norms(&OracleReference::heat(0.1, m), &traj, 0).unwrap();
    assert!(report.sup_h_error > 0.0 && report.sup_h_error.is_finite());
    assert_relative_eq!(report.sup_h_error, HEAT_EXPLICIT_SUP, max_relative = 1e-9);
    assert_relative_eq!(report.int_v_error_sq, HEAT_EXPLICIT_INT, max_relative = 1e-9);
}

// The scheme is diagonal on sin(2πx): u_i = g^i sin with g = 1 + τ μ_h,
// μ_h = -4 sin²(πh)/h². Values below are max_i |e^{-4π² t_i} - g^i| / √2 and
// Σ_{i<m} τ |e^{-4π² t_i} - g^i|² (1 - μ_h) / 2, computed independently.
const HEAT_EXPLICIT_SUP: f64 = 0.0028514177297627365;
const HEAT_EXPLICIT_INT: f64 = 1.5054780867084108e-05;

#[test]
fn fit_rate_examples() {
    let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0];
    let linear: Vec<(f64, f64)> = hs.iter().map(|&h| (h, 3.0 * h)).collect();
    let fit = fit_rate(&linear).unwrap();
    assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
    assert!(fit.residual < 1e-12);
    let quad: Vec<(f64, f64)> = hs.iter().map(|&h| (h, 3.0 * h * h)).collect();
    assert_relative_eq!(fit_rate(&quad).unwrap().slope, 2.0, epsilon = 1e-12);
}

#[test]
fn fit_rate_tolerates_jitter() {
    // Deterministic ±5% multiplicative jitter; worst case for 4 points
    // perturbs the slope by at most ~0.07.
    let hs = [1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
    for pattern in 0..16u32 {
        let pts: Vec<(f64, f64)> = hs
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let sign = if pattern >> i & 1 == 1 { 1.0 } else { -1.0 };
                (h, h * (1.0 + 0.05 * sign))
            })
            .collect();
        let slope = fit_rate(&pts).unwrap().slope;
        assert!((0.85..=1.15).contains(&slope), "pattern {pattern}: {slope}");
    }
}

#[test]
fn fit_rate_rejects_bad_input() {
    assert!(fit_rate(&[(0.5, 1.0), (0.25, 0.5)]).is_err());
    assert!(fit_rate(&[(0.5, 1.0), (0.25, 0.0), (0.125, 0.1)]).is_err());
    assert!(fit_rate(&[(0.25, 1.0), (0.5, 0.5), (0.125, 0.1)]).is_err());
}

#[test]
fn rms_is_permutation_invariant() {
    let v: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 * 1e-3 + 1e-17 * i as f64).collect();
    let mut w = v.clone();
    w.reverse();
    w.rotate_left(11);
    assert_eq!(rms(&v).to_bits(), rms(&w).to_bits());
}

#[test]
fn level_parsing() {
    let levels = Level::parse_list("8:64, 16:64,32:64").unwrap();
    assert_eq!(levels, vec![Level::new(8, 64), Level::new(16, 64), Level::new(32, 64)]);
    assert!(Level::parse_list("8-64").is_err());
    assert!(Level::parse_list("8:x").is_err());
}

fn oracle_study(levels: &str, replicas: usize) -> StudyConfig {
    StudyConfig::new(
        crate::schemes::SchemeKind::Implicit,
        Level::parse_list(levels).unwrap(),
        replicas,
        11,
        ReferenceChoice::Oracle { b: 1.0 },
    )
}

#[test]
fn study_preconditions() {
    let spec = ProblemConfig::oracle(1.0, 0.1).build().unwrap();
    let single = oracle_study("8:64", 2);
    assert!(matches!(convergence_study(&spec, &single), Err(ExperimentError::Invalid(_))));
    let unnested = oracle_study("8:64,12:64,16:64", 2);
    assert!(matches!(convergence_study(&spec, &unnested), Err(ExperimentError::NotNested(_))));
    let no_sweep = oracle_study("8:64,16:32,32:128", 2);
    assert!(matches!(convergence_study(&spec, &no_sweep), Err(ExperimentError::Invalid(_))));
}

#[test]
fn zero_noise_study_is_seed_and_replica_invariant() {
    let spec = ProblemConfig::heat(0.1).build().unwrap();
    let mut cfg = oracle_study("8:256,16:256,32:256", 1);
    cfg.reference = ReferenceChoice::Oracle { b: 0.0 };
    let one = convergence_study(&spec, &cfg).unwrap();
    cfg.replicas = 3;
    cfg.seed = 99;
    let three = convergence_study(&spec, &cfg).unwrap();
    for (a, b) in one.levels.iter().zip(&three.levels) {
        assert_eq!(a.rms_sup_h_error.to_bits(), b.rms_sup_h_error.to_bits());
    }
}

#[test]
fn oracle_h_sweep_converges() {
    let spec = ProblemConfig::oracle(1.0, 0.1).build().unwrap();
    let study = convergence_study(&spec, &oracle_study("8:2048,16:2048,32:2048", 4)).unwrap();
    let fit = study.sweep(SweepAxis::H).unwrap().fit.as_ref().unwrap();
    assert!(fit.slope > 0.8, "slope {}", fit.slope);
    assert_eq!(study.records.len(), 12);
}

#[test]
fn fine_reference_study_matches_oracle_trend() {
    // Problems built from files carry a fingerprint, so references are cached.
    let spec = ProblemConfig::oracle(0.5, 0.05).build().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = oracle_study("8:64,16:64,32:64", 2);
    cfg.reference = ReferenceChoice::Fine {
        n: 128,
        m: 256,
        cache: Some(dir.path().to_path_buf()),
    };
    let first = convergence_study(&spec, &cfg).unwrap();
    let cached = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(cached, 2);
    let second = convergence_study(&spec, &cfg).unwrap();
    assert_eq!(first, second);
    let rms: Vec<f64> = first.levels.iter().map(|l| l.rms_sup_h_error).collect();
    assert!(rms[0] > rms[1] && rms[1] > rms[2], "{rms:?}");
}

#[test]
fn reference_cache_is_idempotent_and_recovers_from_corruption() {
    let spec = ProblemConfig::oracle(0.5, 0.01).build().unwrap();
    let grid = GridSpec::new(1, 16).unwrap();
    let cfg = SchemeConfig::implicit(32, 0.01);
    let path = WienerPath::sample(4, 1, 32, 0.01).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = reference_solution(&spec, grid, &cfg, &path, Some(dir.path())).unwrap();
    let b = reference_solution(&spec, grid, &cfg, &path, Some(dir.path())).unwrap();
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.values(), y.values());
    }
    let entry = std::fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    std::fs::write(entry.join("frame_000003.bin"), b"garbage").unwrap();
    let c = reference_solution(&spec, grid, &cfg, &path, Some(dir.path())).unwrap();
    for (x, y) in a.states.iter().zip(&c.states) {
        assert_eq!(x.values(), y.values());
    }
}

#[test]
fn study_files_are_written() {
    let spec = ProblemConfig::oracle(1.0, 0.1).build().unwrap();
    let study = convergence_study(&spec, &oracle_study("8:256,16:256,32:256", 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_study(dir.path(), &study).unwrap();
    assert_eq!(files.len(), 3);
    let csv = std::fs::read_to_string(&files[0]).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert!(csv.starts_with("schema_version,kind,N,m,h,tau,replica,seed,sup_H_error,int_V_error_sq,diverged"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[1]).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["sweeps"][0]["axis"], "h");
}
