//! Smoothing kernel primitives and the kernel-convolved check loss.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{check_bandwidth, check_tau, Result};

/// `1 / sqrt(2 pi)`
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Kernel families supported by the smoother.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

impl KernelFamily {
    pub fn pdf(self, z: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => kernel_pdf(z),
        }
    }

    pub fn cdf(self, z: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => kernel_cdf(z),
        }
    }

    pub fn pdf_deriv(self, z: f64) -> f64 {
        match self {
            KernelFamily::Gaussian => kernel_pdf_deriv(z),
        }
    }

    /// Second moment `int z^2 k(z) dz`.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 1.0,
        }
    }

    /// `int_0^inf K(z) (1 - K(z)) dz`. The regularity conditions on the
    /// kernel require this to be positive and finite; it does not enter any
    /// estimator formula.
    pub fn cdf_dispersion(self) -> f64 {
        match self {
            KernelFamily::Gaussian => 0.5 / PI.sqrt(),
        }
    }
}

/// A kernel family together with a bandwidth `h` in response units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        check_bandwidth(bandwidth)?;
        Ok(Self { family, bandwidth })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        Self::new(KernelFamily::Gaussian, bandwidth)
    }

    /// Scaled density `k_h(u) = k(u / h) / h`.
    pub fn scaled_pdf(&self, u: f64) -> f64 {
        self.family.pdf(u / self.bandwidth) / self.bandwidth
    }

    /// Scaled distribution function `K(u / h)`.
    pub fn scaled_cdf(&self, u: f64) -> f64 {
        self.family.cdf(u / self.bandwidth)
    }
}

/// Standard normal density.
#[inline]
pub fn kernel_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn kernel_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

#[inline]
pub fn kernel_pdf_deriv(z: f64) -> f64 {
    -z * kernel_pdf(z)
}

/// Check function `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(check_loss_unchecked(u, tau))
}

#[inline]
pub(crate) fn check_loss_unchecked(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Gaussian-kernel convolution of the check loss, `E[rho_tau(u - h Z)]` with
/// `Z` standard normal.
///
/// Closed form: `u (tau - 1 + Phi(u/h)) + h phi(u/h)`. Its derivative in `u`
/// is `Phi(u/h) - (1 - tau)`.
pub fn smoothed_check_loss(u: f64, tau: f64, h: f64) -> Result<f64> {
    check_tau(tau)?;
    check_bandwidth(h)?;
    Ok(smoothed_check_loss_unchecked(u, tau, h))
}

/// Derivative in `u` of [`smoothed_check_loss`].
pub fn smoothed_check_loss_deriv(u: f64, tau: f64, h: f64) -> Result<f64> {
    check_tau(tau)?;
    check_bandwidth(h)?;
    Ok(smoothed_loss_slope(u / h, tau))
}

#[inline]
pub(crate) fn smoothed_check_loss_unchecked(u: f64, tau: f64, h: f64) -> f64 {
    let c = u / h;
    // Pick the branch whose bracket does not cancel.
    let slope = if u >= 0.0 {
        tau - kernel_cdf(-c)
    } else {
        tau - 1.0 + kernel_cdf(c)
    };
    u * slope + h * kernel_pdf(c)
}

#[inline]
fn smoothed_loss_slope(c: f64, tau: f64) -> f64 {
    if c >= 0.0 {
        tau - kernel_cdf(-c)
    } else {
        kernel_cdf(c) - (1.0 - tau)
    }
}
