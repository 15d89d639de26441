//! Quantile-dependent Silverman rule-of-thumb bandwidth.
//!
//! For each quantile level `tau`:
//!
//! 1. fit the canonical quantile regression and take its residuals,
//! 2. compute their interquartile range (type-7 sample quantiles),
//! 3. compute their standard deviation (`n - 1` denominator),
//! 4. set `S = min(0.7199528 * IQR, SD)` and `h = 1.06 n^(-1/5) S`.
//!
//! The IQR factor is `0.7199528`, not the textbook `1 / 1.349`.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_tau, Error, Result};
use crate::qr_baseline::{fit_canonical_from, residuals, QrFit};
use crate::stats::{iqr, sample_sd};

pub const IQR_FACTOR: f64 = 0.719_952_8;
pub const SILVERMAN_CONSTANT: f64 = 1.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotBandwidth {
    pub tau: f64,
    pub h: f64,
    pub s_hat: f64,
    pub iqr: f64,
    pub sd: f64,
    pub n: usize,
}

impl RotBandwidth {
    /// True when `n h^3 / log n < 10`, i.e. the bandwidth is small relative
    /// to what the asymptotic theory asks of the sample size.
    pub fn undersmoothing_warning(&self) -> bool {
        let n = self.n as f64;
        n * self.h.powi(3) / n.ln() < 10.0
    }
}

/// Rule-of-thumb bandwidth at `tau`.
pub fn rot_bandwidth(data: &Dataset, tau: f64) -> Result<RotBandwidth> {
    rot_bandwidth_from(data, tau, None).map(|(bw, _)| bw)
}

/// Rule-of-thumb bandwidth, warm-starting the canonical fit. Also returns
/// that fit so a sweep over `tau` can chain starts.
pub fn rot_bandwidth_from(
    data: &Dataset,
    tau: f64,
    start: Option<&[f64]>,
) -> Result<(RotBandwidth, QrFit)> {
    check_tau(tau)?;
    if data.n() < 4 {
        return Err(Error::InvalidDataset(format!(
            "rule-of-thumb bandwidth needs at least 4 observations, got {}",
            data.n()
        )));
    }
    let fit = fit_canonical_from(data, tau, start)?;
    let res = residuals(data, &fit)?;
    let bw = from_residuals(&res, tau)?;
    // Rounding leaves residuals of order eps * |Y| on an exact fit.
    let y_scale = data.response().iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if bw.s_hat <= 1e-10 * y_scale {
        return Err(Error::DegenerateResiduals { tau });
    }
    Ok((bw, fit))
}

/// Applies steps 2-4 to a residual vector.
pub fn from_residuals(residuals: &[f64], tau: f64) -> Result<RotBandwidth> {
    check_tau(tau)?;
    let n = residuals.len();
    if n < 4 {
        return Err(Error::InvalidDataset(format!(
            "rule-of-thumb bandwidth needs at least 4 residuals, got {n}"
        )));
    }
    let iq = iqr(residuals);
    let sd = sample_sd(residuals);
    let s_hat = (IQR_FACTOR * iq).min(sd);
    if !(s_hat > 0.0) {
        return Err(Error::DegenerateResiduals { tau });
    }
    let h = SILVERMAN_CONSTANT / (n as f64).powf(0.2) * s_hat;
    Ok(RotBandwidth {
        tau,
        h,
        s_hat,
        iqr: iq,
        sd,
        n,
    })
}
