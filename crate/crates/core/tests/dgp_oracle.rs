mod common;

use common::rng;
use convmode::dgp::{generate, generate_with, replication_rng, PopulationOracle, SimConfig, SkewNormalStd};
use rand::Rng;
use std::f64::consts::PI;

#[test]
fn standardisation_solves_the_moment_equations() {
    for &shape in &[0.0, 0.5, 2.0, -3.0, 10.0] {
        let law = SkewNormalStd::standardize(shape).unwrap();
        let delta = shape / (1.0 + shape * shape).sqrt();
        assert!((law.xi + law.omega * delta * (2.0 / PI).sqrt()).abs() <= 1e-12);
        assert!((law.omega * law.omega * (1.0 - 2.0 * delta * delta / PI) - 1.0).abs() <= 1e-12);
    }
    let law = SkewNormalStd::standardize(2.0).unwrap();
    assert!((law.delta - 0.894_427_191).abs() < 1e-9);
    assert!((law.omega - 1.427_546_029).abs() < 1e-8);
    assert!((law.xi + 1.018_767_719).abs() < 1e-8);
    assert!(SkewNormalStd::standardize(f64::NAN).is_err());
}

#[test]
fn sampled_moments() {
    for (k, &shape) in [0.0, 2.0, -4.0].iter().enumerate() {
        let law = SkewNormalStd::standardize(shape).unwrap();
        let mut r = rng(100 + k as u64);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = law.sample(&mut r);
            s1 += z;
            s2 += z * z;
        }
        let m = s1 / n as f64;
        let v = s2 / n as f64 - m * m;
        assert!(m.abs() < 0.005, "shape {shape}: mean {m}");
        assert!((v - 1.0).abs() < 0.01, "shape {shape}: var {v}");
    }
}

#[test]
fn noiseless_generation_hook() {
    let cfg = SimConfig::reference(300, 1, 9);
    let data = generate_with(&cfg, &mut replication_rng(9, 0), |_| 0.0).unwrap();
    for (row, y) in data.rows() {
        assert_eq!(row[0], 1.0);
        assert!(row[1] > 1.0 && row[1] < 5.0);
        assert_eq!(y, 1.0 + row[1]);
    }
}

#[test]
fn generation_is_seeded_per_stream() {
    let cfg = SimConfig::reference(50, 1, 5);
    let a = generate(&cfg, &mut replication_rng(5, 3)).unwrap();
    let b = generate(&cfg, &mut replication_rng(5, 3)).unwrap();
    let c = generate(&cfg, &mut replication_rng(5, 4)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn large_sample_marginals() {
    let cfg = SimConfig::reference(1_000_000, 1, 77);
    let data = generate(&cfg, &mut replication_rng(77, 0)).unwrap();
    let (mut below, mut sum, mut count) = (0usize, 0.0, 0usize);
    for (row, y) in data.rows() {
        if row[1] <= 3.0 {
            below += 1;
        }
        if row[1] > 2.9 && row[1] < 3.1 {
            sum += y;
            count += 1;
        }
    }
    let p = below as f64 / data.n() as f64;
    assert!((p - 0.5).abs() < 0.005, "{p}");
    let cond_mean = sum / count as f64;
    assert!((cond_mean - 4.0).abs() < 0.02, "{cond_mean}");
}

fn oracle(shape: f64) -> PopulationOracle {
    let mut cfg = SimConfig::reference(100, 1, 0);
    cfg.shape = shape;
    PopulationOracle::new(&cfg).unwrap()
}

fn tau_grid() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

#[test]
fn quantile_density_identity() {
    let o = oracle(2.0);
    let x = [1.0, 3.0];
    for i in 1..10 {
        let tau = i as f64 / 10.0;
        let q = o.quantile(tau, &x).unwrap();
        assert!((o.qdf(tau, &x).unwrap() * o.pdf(q, &x) - 1.0).abs() < 1e-9);
        assert!((o.cdf(q, &x) - tau).abs() < 1e-12);
    }
    for i in 0..=40 {
        let y = -1.0 + 0.2 * i as f64;
        let tau = o.cdf(y, &x);
        if tau > 1e-9 && tau < 1.0 - 1e-9 {
            assert!((o.quantile(tau, &x).unwrap() - y).abs() < 1e-9, "y {y}");
        }
    }
}

#[test]
fn linear_quantile_path() {
    let o = oracle(2.0);
    let mut r = rng(5);
    for _ in 0..10 {
        let x = [1.0, r.random_range(1.0..5.0)];
        for &tau in &[0.05, 0.3, 0.5, 0.72, 0.95] {
            let b = o.beta_path(tau).unwrap();
            let q = o.quantile(tau, &x).unwrap();
            assert!((x[0] * b[0] + x[1] * b[1] - q).abs() < 1e-12);
        }
    }
}

#[test]
fn population_hessian_is_spd() {
    let o = oracle(2.0);
    for tau in tau_grid() {
        let d = o.d_matrix(tau).unwrap();
        assert!((d[(0, 1)] - d[(1, 0)]).abs() == 0.0);
        let eig = d.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e > 0.0), "tau {tau}");
    }
}

#[test]
fn matrix_and_closed_form_sparsity_agree() {
    for &shape in &[2.0, 0.0] {
        let o = oracle(shape);
        for &x in &[[1.0, 3.0], [1.0, 1.5], [1.0, 4.8]] {
            for tau in tau_grid() {
                let a = o.sparsity_matrix(tau, &x).unwrap();
                let b = o.sparsity(tau, &x).unwrap();
                assert!(((a - b) / b).abs() < 1e-4, "shape {shape} tau {tau}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn sparsity_peaks_at_the_mode_level() {
    let o = oracle(2.0);
    let x = [1.0, 3.0];
    let grid = tau_grid();
    let best = grid
        .iter()
        .copied()
        .max_by(|a, b| o.sparsity(*a, &x).unwrap().total_cmp(&o.sparsity(*b, &x).unwrap()))
        .unwrap();
    assert!((best - o.tau_mode).abs() <= 0.01, "{best} vs {}", o.tau_mode);
}

#[test]
fn mode_matches_a_fine_grid_scan() {
    let o = oracle(2.0);
    // Locate the peak coarsely, then scan its neighbourhood with step 1e-6.
    let coarse = (0..=8000)
        .map(|i| -4.0 + i as f64 * 1e-3)
        .max_by(|a, b| o.law.pdf(*a).total_cmp(&o.law.pdf(*b)))
        .unwrap();
    let fine = (0..=4000)
        .map(|i| coarse - 2e-3 + i as f64 * 1e-6)
        .max_by(|a, b| o.law.pdf(*a).total_cmp(&o.law.pdf(*b)))
        .unwrap();
    assert!((o.mode_z - fine).abs() <= 2e-6, "{} vs {fine}", o.mode_z);
    assert!((o.tau_mode - o.law.cdf(o.mode_z)).abs() == 0.0);
    assert!((o.mode(&[1.0, 3.0]) - (4.0 + 2.0 * o.mode_z)).abs() < 1e-12);
}

#[test]
fn symmetric_case() {
    let o = oracle(0.0);
    assert!((o.tau_mode - 0.5).abs() < 1e-9);
    assert!((o.mode(&[1.0, 3.0]) - 4.0).abs() < 1e-9);
}

#[test]
fn hessian_derivative_matches_numeric_differentiation() {
    let o = oracle(2.0);
    let step = 1e-4;
    for &tau in &[0.1, 0.3, 0.5, 0.7, 0.9] {
        let dd = o.d_matrix_deriv(tau).unwrap();
        let num = (o.d_matrix(tau + step).unwrap() - o.d_matrix(tau - step).unwrap()) / (2.0 * step);
        for k in 0..4 {
            let (a, b) = (dd[k], num[k]);
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0), "tau {tau}: {a} vs {b}");
        }
    }
}

#[test]
fn sparsity_derivative_matches_numeric_differentiation() {
    let o = oracle(2.0);
    let x = [1.0, 3.0];
    let step = 1e-4;
    for &tau in &[0.1, 0.25, 0.5, 0.75, 0.9] {
        let a = o.sparsity_deriv(tau, &x).unwrap();
        let b = (o.sparsity(tau + step, &x).unwrap() - o.sparsity(tau - step, &x).unwrap()) / (2.0 * step);
        assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0), "tau {tau}: {a} vs {b}");
    }
    // The derivative changes sign across the peak.
    assert!(o.sparsity_deriv(o.tau_mode - 0.05, &x).unwrap() > 0.0);
    assert!(o.sparsity_deriv(o.tau_mode + 0.05, &x).unwrap() < 0.0);
}

#[test]
fn config_validation() {
    let mut cfg = SimConfig::reference(0, 1, 0);
    assert!(cfg.validate().is_err());
    cfg.n = 10;
    cfg.replications = 0;
    assert!(cfg.validate().is_err());
    cfg.replications = 1;
    cfg.x_eval = vec![1.0];
    assert!(cfg.validate().is_err());
}
