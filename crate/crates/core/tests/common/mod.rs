#![allow(dead_code)]

use convmode::dgp::{generate, replication_rng, SimConfig};
use convmode::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws from the simulation design with the given error shape.
pub fn dgp_data(n: usize, seed: u64, shape: f64) -> Dataset {
    let mut cfg = SimConfig::reference(n, 1, seed);
    cfg.shape = shape;
    generate(&cfg, &mut replication_rng(seed, 0)).unwrap()
}

/// Random design with an intercept and `d - 1` uniform covariates and a
/// heavy-ish tailed response.
pub fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let mut lin = 0.5;
        x.push(1.0);
        for j in 1..d {
            let v: f64 = rng.random_range(-2.0..3.0);
            lin += v * j as f64 * 0.3;
            x.push(v);
        }
        let e: f64 = rng.random_range(-1.0..1.0);
        y.push(lin + e * e.abs() * 3.0);
    }
    Dataset::from_rows(x, y, d).unwrap()
}

/// Central difference of a scalar function of a vector along coordinate `j`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, b: &[f64], j: usize, step: f64) -> f64 {
    let mut p = b.to_vec();
    let mut m = b.to_vec();
    p[j] += step;
    m[j] -= step;
    (f(&p) - f(&m)) / (2.0 * step)
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
