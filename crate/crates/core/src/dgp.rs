//! Heteroscedastic skew-normal simulation design and its population
//! quantities.
//!
//! Data follow `Y = X' beta + (1 + Xt) Z / 2` with `X = (1, Xt)`,
//! `Xt ~ U(1, 5)` and `Z` a skew-normal variable standardised to zero mean
//! and unit variance. Conditionally on `Xt = t` the response is a
//! location-scale transform of `Z` with scale `sigma(t) = (1 + t) / 2`, so
//! the conditional quantiles are exactly linear in `X`:
//! `Q(tau | x) = x' (beta + (1/2, 1/2) Q_Z(tau))`.

use std::f64::consts::{FRAC_2_PI, PI};

use nalgebra::{DMatrix, DVector};
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset};
use crate::error::{check_tau, Error, Result};
use crate::kernel::{kernel_cdf, kernel_pdf};
use crate::mode::{BandwidthPolicy, TauGrid};
use crate::optim::golden_section_max;
use crate::quadrature::integrate;

/// Support of the non-constant covariate.
pub const COVARIATE_RANGE: (f64, f64) = (1.0, 5.0);

/// Absolute tolerance of every population integral.
pub const ORACLE_QUAD_TOL: f64 = 1e-10;

/// Skew-normal law with shape `shape`, shifted and scaled to zero mean and
/// unit variance: `Z = xi + omega * Z0`, `Z0 ~ SN(0, 1, shape)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewNormalStd {
    pub shape: f64,
    pub delta: f64,
    pub xi: f64,
    pub omega: f64,
}

impl SkewNormalStd {
    pub fn standardize(shape: f64) -> Result<Self> {
        if !shape.is_finite() {
            return Err(Error::InvalidConfig(format!("skew-normal shape must be finite, got {shape}")));
        }
        let delta = shape / (1.0 + shape * shape).sqrt();
        let omega = (1.0 - FRAC_2_PI * delta * delta).powf(-0.5);
        let xi = -omega * delta * FRAC_2_PI.sqrt();
        Ok(Self {
            shape,
            delta,
            xi,
            omega,
        })
    }

    /// Mean `xi + omega delta sqrt(2/pi)`; zero up to rounding.
    pub fn mean(&self) -> f64 {
        self.xi + self.omega * self.delta * FRAC_2_PI.sqrt()
    }

    /// Variance `omega^2 (1 - 2 delta^2 / pi)`; one up to rounding.
    pub fn variance(&self) -> f64 {
        self.omega * self.omega * (1.0 - FRAC_2_PI * self.delta * self.delta)
    }

    fn standard_coord(&self, z: f64) -> f64 {
        (z - self.xi) / self.omega
    }

    pub fn pdf(&self, z: f64) -> f64 {
        let t = self.standard_coord(z);
        2.0 * kernel_pdf(t) * kernel_cdf(self.shape * t) / self.omega
    }

    pub fn pdf_deriv(&self, z: f64) -> f64 {
        let t = self.standard_coord(z);
        let a = self.shape;
        2.0 * kernel_pdf(t) * (-t * kernel_cdf(a * t) + a * kernel_pdf(a * t)) / (self.omega * self.omega)
    }

    /// `Phi(t) - 2 T(t, shape)` with Owen's T function.
    pub fn cdf(&self, z: f64) -> f64 {
        let t = self.standard_coord(z);
        (kernel_cdf(t) - 2.0 * owens_t(t, self.shape)).clamp(0.0, 1.0)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        check_tau(p)?;
        // Bracket, then safeguarded Newton.
        let (mut lo, mut hi) = (-8.0, 8.0);
        while self.cdf(lo) > p {
            lo *= 2.0;
        }
        while self.cdf(hi) < p {
            hi *= 2.0;
        }
        let mut z = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.cdf(z) - p;
            if f > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let dens = self.pdf(z);
            let mut next = z - f / dens;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) || hi - lo <= 1e-15 * (1.0 + z.abs()) {
                return Ok(next);
            }
            z = next;
        }
        Ok(z)
    }

    /// Location of the density maximum.
    pub fn mode(&self) -> f64 {
        // Golden section on the density, then bisection on the score
        // -t + a phi(a t) / Phi(a t), which is decreasing (log-concavity).
        let (t0, _) = golden_section_max(|t| {
            2.0 * kernel_pdf(t) * kernel_cdf(self.shape * t)
        }, -4.0, 4.0, 1e-10);
        let a = self.shape;
        let score = |t: f64| -t + a * kernel_pdf(a * t) / kernel_cdf(a * t);
        let (mut lo, mut hi) = (t0 - 1e-6, t0 + 1e-6);
        if score(lo) > 0.0 && score(hi) < 0.0 {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if score(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            self.xi + self.omega * 0.5 * (lo + hi)
        } else {
            self.xi + self.omega * t0
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u1: f64 = rng.sample(StandardNormal);
        let u2: f64 = rng.sample(StandardNormal);
        let z0 = self.delta * u1.abs() + (1.0 - self.delta * self.delta).sqrt() * u2;
        self.xi + self.omega * z0
    }
}

/// Owen's T function `T(h, a) = (2 pi)^-1 int_0^a exp(-h^2 (1 + x^2) / 2) / (1 + x^2) dx`.
pub fn owens_t(h: f64, a: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let hh = 0.5 * h * h;
    integrate(
        |x| {
            let q = 1.0 + x * x;
            (-hh * q).exp() / q
        },
        0.0,
        a,
        1e-15,
    )
    .expect("Owen's T integrand is smooth on a finite interval")
        / (2.0 * PI)
}

/// Monte Carlo and estimation settings for the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub replications: usize,
    pub beta: Vec<f64>,
    pub x_eval: Vec<f64>,
    pub tau_grid: TauGrid,
    pub bandwidth_policy: BandwidthPolicy,
    pub seed: u64,
    /// Skew-normal shape of the standardised error.
    pub shape: f64,
}

impl SimConfig {
    /// Reference design: `beta = (1, 1)`, `x = (1, 3)`, grid 0.01..0.99,
    /// rule-of-thumb bandwidths, shape 2.
    pub fn reference(n: usize, replications: usize, seed: u64) -> Self {
        Self {
            n,
            replications,
            beta: vec![1.0, 1.0],
            x_eval: vec![1.0, 3.0],
            tau_grid: TauGrid::new(0.01, 0.01).expect("static grid"),
            bandwidth_policy: BandwidthPolicy::RuleOfThumb,
            seed,
            shape: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        if self.beta.len() != 2 || self.x_eval.len() != 2 {
            return Err(Error::InvalidConfig(
                "the design has an intercept and one covariate; beta and x_eval need 2 entries".into(),
            ));
        }
        if let BandwidthPolicy::Fixed(h) = self.bandwidth_policy {
            crate::error::check_bandwidth(h)?;
        }
        SkewNormalStd::standardize(self.shape)?;
        Ok(())
    }
}

/// Deterministic generator for replication `replication` under `seed`.
/// Each replication owns an independent ChaCha stream.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Draws one dataset of size `config.n`.
pub fn generate<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<Dataset> {
    let law = SkewNormalStd::standardize(config.shape)?;
    generate_with(config, rng, |r| law.sample(r))
}

/// Like [`generate`] with a caller-supplied draw for the standardised error.
pub fn generate_with<R, F>(config: &SimConfig, rng: &mut R, mut draw_z: F) -> Result<Dataset>
where
    R: Rng + ?Sized,
    F: FnMut(&mut R) -> f64,
{
    config.validate()?;
    let (lo, hi) = COVARIATE_RANGE;
    let mut x = Vec::with_capacity(2 * config.n);
    let mut y = Vec::with_capacity(config.n);
    for _ in 0..config.n {
        let u: f64 = rng.sample(Open01);
        let xt = lo + (hi - lo) * u;
        let z = draw_z(rng);
        x.extend_from_slice(&[1.0, xt]);
        y.push(config.beta[0] + config.beta[1] * xt + 0.5 * (1.0 + xt) * z);
    }
    Dataset::from_rows(x, y, 2)
}

/// Population quantities of the simulation design.
#[derive(Debug, Clone)]
pub struct PopulationOracle {
    pub beta: Vec<f64>,
    pub law: SkewNormalStd,
    /// Mode of the standardised error.
    pub mode_z: f64,
    /// Conditional quantile mode; the same for every `x`.
    pub tau_mode: f64,
}

impl PopulationOracle {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let law = SkewNormalStd::standardize(config.shape)?;
        let mode_z = law.mode();
        Ok(Self {
            beta: config.beta.clone(),
            law,
            mode_z,
            tau_mode: law.cdf(mode_z),
        })
    }

    /// Conditional scale `sigma(x) = (1 + x_1) / 2`.
    pub fn sigma(&self, x: &[f64]) -> f64 {
        0.5 * (1.0 + x[1])
    }

    fn standardized(&self, y: f64, x: &[f64]) -> (f64, f64) {
        let s = self.sigma(x);
        ((y - dot(x, &self.beta)) / s, s)
    }

    pub fn cdf(&self, y: f64, x: &[f64]) -> f64 {
        self.law.cdf(self.standardized(y, x).0)
    }

    pub fn pdf(&self, y: f64, x: &[f64]) -> f64 {
        let (z, s) = self.standardized(y, x);
        self.law.pdf(z) / s
    }

    /// `d f(y | x) / dy`.
    pub fn pdf_deriv(&self, y: f64, x: &[f64]) -> f64 {
        let (z, s) = self.standardized(y, x);
        self.law.pdf_deriv(z) / (s * s)
    }

    pub fn quantile(&self, tau: f64, x: &[f64]) -> Result<f64> {
        Ok(dot(x, &self.beta) + self.sigma(x) * self.law.quantile(tau)?)
    }

    /// Quantile density `q(tau | x) = sigma(x) / f_Z(Q_Z(tau))`.
    pub fn qdf(&self, tau: f64, x: &[f64]) -> Result<f64> {
        Ok(self.sigma(x) / self.law.pdf(self.law.quantile(tau)?))
    }

    /// Sparsity `s_x(tau) = -q(tau | x)` from the closed-form density.
    pub fn sparsity(&self, tau: f64, x: &[f64]) -> Result<f64> {
        Ok(-self.qdf(tau, x)?)
    }

    /// Conditional mode `m(x) = x' beta + sigma(x) mode_Z`.
    pub fn mode(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta) + self.sigma(x) * self.mode_z
    }

    /// Population quantile-regression coefficients
    /// `beta(tau) = beta + (1/2, 1/2) Q_Z(tau)`.
    pub fn beta_path(&self, tau: f64) -> Result<Vec<f64>> {
        let qz = self.law.quantile(tau)?;
        Ok(vec![self.beta[0] + 0.5 * qz, self.beta[1] + 0.5 * qz])
    }

    /// `E[X] = (1, 3)`.
    pub fn expected_x(&self) -> DVector<f64> {
        let (lo, hi) = COVARIATE_RANGE;
        DVector::from_vec(vec![1.0, 0.5 * (lo + hi)])
    }

    /// `E[g(X) X X']` for the uniform covariate, one quadrature per entry.
    fn expect_outer(&self, g: impl Fn(&[f64]) -> f64) -> DMatrix<f64> {
        let (lo, hi) = COVARIATE_RANGE;
        let density = 1.0 / (hi - lo);
        let moment = |p: i32| {
            integrate(
                |t| t.powi(p) * g(&[1.0, t]) * density,
                lo,
                hi,
                ORACLE_QUAD_TOL,
            )
            .expect("oracle integrand is smooth on the covariate support")
        };
        let (m0, m1, m2) = (moment(0), moment(1), moment(2));
        DMatrix::from_row_slice(2, 2, &[m0, m1, m1, m2])
    }

    /// `D(tau) = E[X X' f(X' beta(tau) | X)]`.
    pub fn d_matrix(&self, tau: f64) -> Result<DMatrix<f64>> {
        let b = self.beta_path(tau)?;
        Ok(self.expect_outer(|x| self.pdf(dot(x, &b), x)))
    }

    /// `dD/dtau = E[X X' f'(X' beta(tau) | X) X' D(tau)^-1 E[X]]`.
    pub fn d_matrix_deriv(&self, tau: f64) -> Result<DMatrix<f64>> {
        let b = self.beta_path(tau)?;
        let slope = self.beta_path_deriv(tau)?;
        Ok(self.expect_outer(|x| self.pdf_deriv(dot(x, &b), x) * dot(x, slope.as_slice())))
    }

    /// `beta'(tau) = D(tau)^-1 E[X]`.
    pub fn beta_path_deriv(&self, tau: f64) -> Result<DVector<f64>> {
        let d = self.d_matrix(tau)?;
        crate::sqre::solve_spd(&d, self.expected_x().as_slice(), 0.0)
    }

    /// Sparsity from the matrix formula `-x' D(tau)^-1 E[X]`.
    pub fn sparsity_matrix(&self, tau: f64, x: &[f64]) -> Result<f64> {
        Ok(-dot(x, self.beta_path_deriv(tau)?.as_slice()))
    }

    /// `ds_x/dtau = x' D^-1 D' D^-1 E[X]`.
    pub fn sparsity_deriv(&self, tau: f64, x: &[f64]) -> Result<f64> {
        let d = self.d_matrix(tau)?;
        let dd = self.d_matrix_deriv(tau)?;
        let v = crate::sqre::solve_spd(&d, self.expected_x().as_slice(), 0.0)?;
        let w = crate::sqre::solve_spd(&d, (dd * v).as_slice(), 0.0)?;
        Ok(dot(x, w.as_slice()))
    }
}
