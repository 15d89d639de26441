mod common;

use common::{dgp_data, random_data, rng};
use convmode::dgp::{PopulationOracle, SimConfig};
use convmode::qr_baseline::{check_objective, fit_canonical, residuals};
use convmode::sqre::fit;
use convmode::SolverOptions;
use rand::Rng;

/// Exhaustive oracle for d = 2: a check-loss minimiser interpolates two
/// observations, so the best pair-wise interpolant is optimal.
fn brute_force_optimum(data: &convmode::Dataset, tau: f64) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..data.n() {
        for j in i + 1..data.n() {
            let (a, b) = (data.row(i), data.row(j));
            let det = a[0] * b[1] - a[1] * b[0];
            if det.abs() < 1e-12 {
                continue;
            }
            let (yi, yj) = (data.response()[i], data.response()[j]);
            let beta = [(yi * b[1] - yj * a[1]) / det, (a[0] * yj - b[0] * yi) / det];
            best = best.min(check_objective(data, &beta, tau).unwrap());
        }
    }
    best
}

#[test]
fn matches_exhaustive_search() {
    let mut r = rng(31);
    for case in 0..12 {
        let data = random_data(&mut r, 25 + case, 2);
        for &tau in &[0.1, 0.25, 0.5, 0.77, 0.9] {
            let f = fit_canonical(&data, tau).unwrap();
            let oracle = brute_force_optimum(&data, tau);
            assert!(
                f.objective_value <= oracle + 1e-9,
                "case {case} tau {tau}: {} vs {oracle}",
                f.objective_value
            );
        }
    }
}

#[test]
fn objective_value_recomputes() {
    let mut r = rng(2);
    let data = random_data(&mut r, 200, 3);
    let f = fit_canonical(&data, 0.35).unwrap();
    let again = check_objective(&data, &f.beta, 0.35).unwrap();
    assert!((f.objective_value - again).abs() <= 1e-12);
}

#[test]
fn perturbations_do_not_improve() {
    let mut r = rng(41);
    let data = random_data(&mut r, 300, 3);
    for &tau in &[0.2, 0.5, 0.8] {
        let f = fit_canonical(&data, tau).unwrap();
        for _ in 0..50 {
            let b: Vec<f64> = f.beta.iter().map(|v| v + r.random_range(-0.05..0.05)).collect();
            assert!(check_objective(&data, &b, tau).unwrap() >= f.objective_value);
        }
    }
}

#[test]
fn residual_signs_follow_tau() {
    let mut r = rng(43);
    for case in 0..20 {
        let d = 1 + case % 3;
        let data = random_data(&mut r, 100 + 17 * case, d);
        let tau = r.random_range(0.05..0.95);
        let f = fit_canonical(&data, tau).unwrap();
        let res = residuals(&data, &f).unwrap();
        let n = data.n() as f64;
        let neg = res.iter().filter(|&&e| e < 0.0).count() as f64 / n;
        let slack = d as f64 / n;
        assert!(neg >= tau - slack - 1e-12 && neg <= tau + slack + 1e-12, "case {case}: {neg} vs {tau}");
        for (e, (row, y)) in res.iter().zip(data.rows()) {
            let fitted: f64 = row.iter().zip(&f.beta).map(|(a, b)| a * b).sum();
            assert_eq!(*e, y - fitted);
        }
    }
}

#[test]
fn beats_the_smoothed_fit_on_its_own_loss() {
    let mut r = rng(47);
    let data = random_data(&mut r, 400, 2);
    for &tau in &[0.15, 0.5, 0.85] {
        let q = fit_canonical(&data, tau).unwrap();
        let s = fit(&data, tau, 1e-3, &SolverOptions::default()).unwrap();
        assert!(q.objective_value <= check_objective(&data, &s.beta, tau).unwrap() + 1e-12);
    }
}

#[test]
fn median_on_the_simulation_design() {
    let data = dgp_data(2000, 12, 2.0);
    let oracle = PopulationOracle::new(&SimConfig::reference(2000, 1, 12)).unwrap();
    let f = fit_canonical(&data, 0.5).unwrap();
    let x = [1.0, 3.0];
    let fitted = f.beta[0] + 3.0 * f.beta[1];
    let truth = oracle.quantile(0.5, &x).unwrap();
    assert!((fitted - truth).abs() < 0.1, "{fitted} vs {truth}");
}

#[test]
fn warm_start_reaches_the_same_loss() {
    let mut r = rng(53);
    let data = random_data(&mut r, 250, 2);
    let cold = fit_canonical(&data, 0.6).unwrap();
    let start = fit_canonical(&data, 0.55).unwrap();
    let warm = convmode::qr_baseline::fit_canonical_from(&data, 0.6, Some(&start.beta)).unwrap();
    assert!((cold.objective_value - warm.objective_value).abs() < 1e-10);
}
