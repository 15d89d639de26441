//! Replication harness and normal Q-Q summaries of the mode estimates.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dgp::{generate, replication_rng, SimConfig};
use crate::error::{Error, Result};
use crate::mode::ModeSearch;
use crate::stats::{correlation, mean, quantile_sorted, sample_sd, sorted};

/// Minimum number of successful replications for a Q-Q table.
pub const MIN_QQ_DRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    /// Replication index of each successful estimate.
    pub replications: Vec<usize>,
    pub m_hats: Vec<f64>,
    pub tau_hats: Vec<f64>,
    pub h_hats: Vec<f64>,
    pub failures: usize,
    pub failed_replications: Vec<usize>,
    /// Seconds spent on each replication, successful or not.
    pub wall_times: Vec<f64>,
}

impl SimResult {
    /// Copy without timing, for comparisons across runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_times: Vec::new(),
            ..self.clone()
        }
    }
}

/// Runs every replication on the current rayon pool with default search
/// settings.
pub fn run(config: &SimConfig) -> Result<SimResult> {
    run_with(config, &ModeSearch::default())
}

/// Each replication draws its dataset from its own random stream, so the
/// result does not depend on the thread count or schedule.
pub fn run_with(config: &SimConfig, search: &ModeSearch) -> Result<SimResult> {
    config.validate()?;
    let outcomes: Vec<(Option<(f64, f64, f64)>, f64)> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let started = Instant::now();
            let mut rng = replication_rng(config.seed, rep as u64);
            let outcome = generate(config, &mut rng).ok().and_then(|data| {
                search
                    .estimate_mode(&data, &config.x_eval, &config.tau_grid, config.bandwidth_policy)
                    .ok()
                    .map(|est| (est.m_hat, est.tau_hat, est.h_at_tau_hat))
            });
            (outcome, started.elapsed().as_secs_f64())
        })
        .collect();

    let mut result = SimResult {
        config: config.clone(),
        replications: Vec::new(),
        m_hats: Vec::new(),
        tau_hats: Vec::new(),
        h_hats: Vec::new(),
        failures: 0,
        failed_replications: Vec::new(),
        wall_times: Vec::with_capacity(outcomes.len()),
    };
    for (rep, (outcome, secs)) in outcomes.into_iter().enumerate() {
        result.wall_times.push(secs);
        match outcome {
            Some((m, t, h)) => {
                result.replications.push(rep);
                result.m_hats.push(m);
                result.tau_hats.push(t);
                result.h_hats.push(h);
            }
            None => {
                result.failures += 1;
                result.failed_replications.push(rep);
            }
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqRow {
    pub p: f64,
    /// Type-7 quantile of the standardised draws.
    pub sample_quantile: f64,
    pub normal_quantile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QqTable {
    pub rows: Vec<QqRow>,
    /// Pearson correlation between the two quantile columns.
    pub correlation: f64,
    pub mean: f64,
    pub sd: f64,
}

/// `0.01, 0.02, ..., 0.99`.
pub fn default_levels() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

pub fn qq_table(result: &SimResult, levels: &[f64]) -> Result<QqTable> {
    qq_table_from_draws(&result.m_hats, levels)
}

/// Standardises the draws by their sample mean and SD and pairs their
/// quantiles with standard-normal quantiles.
pub fn qq_table_from_draws(draws: &[f64], levels: &[f64]) -> Result<QqTable> {
    if draws.len() < MIN_QQ_DRAWS {
        return Err(Error::TooFewReplications {
            got: draws.len(),
            need: MIN_QQ_DRAWS,
        });
    }
    if levels.is_empty()
        || levels.iter().any(|p| !(*p > 0.0 && *p < 1.0))
        || levels.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(Error::InvalidConfig(
            "Q-Q levels must be strictly increasing inside (0, 1)".into(),
        ));
    }
    let m = mean(draws);
    let sd = sample_sd(draws);
    if !(sd > 0.0) {
        return Err(Error::InvalidConfig("draws have zero spread".into()));
    }
    let standardized = sorted(&draws.iter().map(|v| (v - m) / sd).collect::<Vec<_>>());
    let normal = Normal::standard();
    let rows: Vec<QqRow> = levels
        .iter()
        .map(|&p| QqRow {
            p,
            sample_quantile: quantile_sorted(&standardized, p),
            normal_quantile: normal.inverse_cdf(p),
        })
        .collect();
    let a: Vec<f64> = rows.iter().map(|r| r.sample_quantile).collect();
    let b: Vec<f64> = rows.iter().map(|r| r.normal_quantile).collect();
    Ok(QqTable {
        correlation: correlation(&a, &b),
        rows,
        mean: m,
        sd,
    })
}
