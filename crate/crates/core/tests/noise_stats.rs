use spde_fd::noise::{replica_seed, WienerPath, INCREMENT_QUANTUM};
use statrs::distribution::{ContinuousCDF, Normal};

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn increment_variance_matches_tau() {
    let m = 1_000_000;
    let tau = 0.001;
    let path = WienerPath::sample(2026, 1, m, tau * m as f64).unwrap();
    let (mean, var) = mean_var(path.increments());
    let var_se = tau * (2.0 / (m as f64 - 1.0)).sqrt();
    assert!((var - tau).abs() <= 3.0 * var_se, "variance {var} vs {tau} (se {var_se})");
    assert!(mean.abs() <= 3.0 * (tau / m as f64).sqrt(), "mean {mean}");
}

#[test]
fn components_are_uncorrelated() {
    let m = 100_000;
    let path = WienerPath::sample(7, 2, m, 1.0).unwrap();
    let a: Vec<f64> = (0..m).map(|i| path.increment(i)[0]).collect();
    let b: Vec<f64> = (0..m).map(|i| path.increment(i)[1]).collect();
    let (ma, va) = mean_var(&a);
    let (mb, vb) = mean_var(&b);
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (m as f64 - 1.0);
    let corr = cov / (va * vb).sqrt();
    assert!(corr.abs() < 4.0 / (m as f64).sqrt(), "correlation {corr}");
}

#[test]
fn standardized_increments_pass_kolmogorov_smirnov() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    for (seed, m) in [(1u64, 10_000usize), (replica_seed(2026, 3), 40_000)] {
        let path = WienerPath::sample(seed, 1, m, 1.0).unwrap();
        let s = path.tau().sqrt();
        let mut z: Vec<f64> = path.increments().iter().map(|x| x / s).collect();
        z.sort_by(f64::total_cmp);
        let n = z.len() as f64;
        let stat = z
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = normal.cdf(x);
                (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max);
        // Asymptotic 1% critical value.
        assert!(stat < 1.628 / n.sqrt(), "seed {seed}: D = {stat}");
    }
}

#[test]
fn increments_are_quantized() {
    let path = WienerPath::sample(11, 2, 4096, 0.5).unwrap();
    for &x in path.increments() {
        let q = x / INCREMENT_QUANTUM;
        assert_eq!(q, q.round());
    }
}

#[test]
fn coarsening_telescopes_exactly() {
    let fine = WienerPath::sample(99, 2, 1 << 12, 0.1).unwrap();
    let two_step = fine.coarsen(2).unwrap().coarsen(4).unwrap();
    let direct = fine.coarsen(8).unwrap();
    assert_eq!(two_step.increments(), direct.increments());
    assert_eq!(fine.coarsen_to(8).unwrap().increments(), fine.coarsen(512).unwrap().increments());
    for k in 0..2 {
        let wf = fine.cumulative(k);
        let wc = direct.cumulative(k);
        for (j, &w) in wc.iter().enumerate() {
            assert_eq!(w.to_bits(), wf[8 * j].to_bits(), "component {k}, level {j}");
        }
    }
    assert_eq!(fine.terminal(), direct.terminal());
}
