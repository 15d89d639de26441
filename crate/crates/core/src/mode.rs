//! Sample sparsity, quantile-mode search and the mode estimate.
//!
//! For a design point `x` and bandwidth `h` the sample sparsity is
//! `s(tau) = -x' beta_h'(tau) = -x' D_h(tau)^-1 X-bar`, where `D_h(tau)` is
//! the Hessian of the smoothed objective at the fitted coefficients. Since
//! `s = -q` and `q(tau|x) = 1 / f(Q(tau|x) | x)`, maximising `s` over
//! `tau in [alpha, 1 - alpha]` finds the quantile level whose conditional
//! quantile sits at the density peak. The mode estimate is the fitted
//! quantile `x' beta_h(tau_hat)` at that level.
//!
//! The search evaluates `s` on a grid, sweeping `tau` upwards with warm
//! starts, then refines by golden-section search inside the cells adjacent
//! to the best grid point.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bandwidth::rot_bandwidth_from;
use crate::data::{dot, Dataset};
use crate::error::{check_bandwidth, check_tau, Error, Result};
use crate::optim::golden_section_max;
use crate::sqre::{fit_from, hessian_unchecked, least_squares, solve_spd, SolverOptions, SqreFit};

/// Values within this distance of the grid maximum count as ties; the
/// smallest tied `tau` wins.
pub const TIE_TOL: f64 = 1e-12;

/// Ordered quantile levels inside `[alpha, 1 - alpha]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauGrid {
    alpha: f64,
    step: f64,
    points: Vec<f64>,
}

impl TauGrid {
    /// Equally spaced grid `alpha, alpha + step, ...` up to `1 - alpha`.
    pub fn new(alpha: f64, step: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!("step must be positive, got {step}")));
        }
        let upper = 1.0 - alpha;
        let mut points = Vec::new();
        for k in 0.. {
            // Rounded so that e.g. 0.01 + 5 * 0.01 prints as 0.06.
            let v = ((alpha + k as f64 * step) * 1e12).round() / 1e12;
            if v > upper + 1e-12 {
                break;
            }
            points.push(v.min(upper));
        }
        Ok(Self { alpha, step, points })
    }

    /// Grid from explicit points; they must increase strictly and lie in
    /// `[alpha, 1 - alpha]`.
    pub fn from_points(alpha: f64, points: Vec<f64>) -> Result<Self> {
        check_alpha(alpha)?;
        if points.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGrid("points must be strictly increasing".into()));
        }
        if points[0] < alpha || points[points.len() - 1] > 1.0 - alpha {
            return Err(Error::InvalidGrid(format!(
                "points must lie in [{alpha}, {}]",
                1.0 - alpha
            )));
        }
        let step = if points.len() > 1 {
            (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64
        } else {
            0.0
        };
        Ok(Self { alpha, step, points })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::InvalidGrid(format!("alpha must lie in (0, 1/2), got {alpha}")))
    }
}

/// How the bandwidth is chosen at each quantile level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// Rule-of-thumb bandwidth recomputed at every `tau`.
    RuleOfThumb,
}

/// Sample sparsity along a grid for one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityCurve {
    pub x: Vec<f64>,
    pub grid: TauGrid,
    /// `None` where the fit failed or `D_h` was singular.
    pub values: Vec<Option<f64>>,
    /// `None` where no bandwidth could be formed.
    pub bandwidths: Vec<Option<f64>>,
    pub fits: Vec<Option<SqreFit>>,
}

impl SparsityCurve {
    pub fn failures(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Index of the largest value; ties within [`TIE_TOL`] go to the
    /// smallest `tau`.
    pub fn argmax(&self) -> Option<usize> {
        let max = self
            .values
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.values
            .iter()
            .position(|v| matches!(v, Some(s) if *s >= max - TIE_TOL))
    }
}

/// The mode estimate at one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub x: Vec<f64>,
    pub tau_hat: f64,
    pub m_hat: f64,
    pub h_at_tau_hat: f64,
    /// Sparsity at `tau_hat`.
    pub s_hat: f64,
    /// Smoothed fit at `(tau_hat, h_at_tau_hat)`.
    pub fit: SqreFit,
    pub curve: SparsityCurve,
    /// Whether golden-section refinement ran after the grid search.
    pub refined: bool,
}

/// `D_h(tau)`: the smoothed-objective Hessian at a converged fit.
pub fn d_hat(data: &Dataset, fit: &SqreFit) -> Result<DMatrix<f64>> {
    require_converged(fit)?;
    data.check_dim(fit.beta.len())?;
    Ok(hessian_unchecked(data, &fit.beta, fit.h))
}

fn require_converged(fit: &SqreFit) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NonConvergentFit {
            tau: fit.tau,
            grad_norm: fit.grad_norm,
        })
    }
}

/// `-x' D_h(tau)^-1 X-bar` at an existing fit.
pub fn sparsity_from_fit(data: &Dataset, x: &[f64], fit: &SqreFit, rank_tol: f64) -> Result<f64> {
    data.check_dim(x.len())?;
    let d = d_hat(data, fit)?;
    let slope = solve_spd(&d, data.x_mean(), rank_tol)?;
    Ok(-dot(x, slope.as_slice()))
}

/// Sample sparsity at `(tau, h)`, fitting from least squares.
pub fn sparsity_at(data: &Dataset, x: &[f64], tau: f64, h: f64) -> Result<f64> {
    ModeSearch::default().sparsity_at(data, x, tau, h)
}

pub fn find_quantile_mode(
    data: &Dataset,
    x: &[f64],
    grid: &TauGrid,
    policy: BandwidthPolicy,
) -> Result<(f64, SparsityCurve)> {
    ModeSearch::default().find_quantile_mode(data, x, grid, policy)
}

pub fn estimate_mode(
    data: &Dataset,
    x: &[f64],
    grid: &TauGrid,
    policy: BandwidthPolicy,
) -> Result<ModeEstimate> {
    ModeSearch::default().estimate_mode(data, x, grid, policy)
}

/// Tuning of the mode search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSearch {
    pub solver: SolverOptions,
    /// Run golden-section refinement around the best grid point.
    pub refine: bool,
    /// Bracket width at which refinement stops.
    pub refine_tol: f64,
}

impl Default for ModeSearch {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            refine: true,
            refine_tol: 1e-7,
        }
    }
}

impl ModeSearch {
    pub fn sparsity_at(&self, data: &Dataset, x: &[f64], tau: f64, h: f64) -> Result<f64> {
        data.check_dim(x.len())?;
        check_tau(tau)?;
        check_bandwidth(h)?;
        let start = least_squares(data)?;
        let fit = fit_from(data, tau, h, &start, &self.solver)?;
        sparsity_from_fit(data, x, &fit, self.solver.rank_tol)
    }

    /// Evaluates the sparsity on every grid point. Points whose bandwidth,
    /// fit or Hessian inversion fails are recorded as `None`.
    pub fn sparsity_curve(
        &self,
        data: &Dataset,
        x: &[f64],
        grid: &TauGrid,
        policy: BandwidthPolicy,
    ) -> Result<SparsityCurve> {
        data.check_dim(x.len())?;
        if let BandwidthPolicy::Fixed(h) = policy {
            check_bandwidth(h)?;
        }
        let m = grid.len();
        let mut values = Vec::with_capacity(m);
        let mut bandwidths = Vec::with_capacity(m);
        let mut fits = Vec::with_capacity(m);
        let mut qr_start: Option<Vec<f64>> = None;
        let mut start = least_squares(data)?;

        for &tau in grid.points() {
            let h = match policy {
                BandwidthPolicy::Fixed(h) => Some(h),
                BandwidthPolicy::RuleOfThumb => {
                    match rot_bandwidth_from(data, tau, qr_start.as_deref()) {
                        Ok((bw, qr)) => {
                            qr_start = Some(qr.beta);
                            Some(bw.h)
                        }
                        Err(_) => None,
                    }
                }
            };
            bandwidths.push(h);
            let Some(h) = h else {
                values.push(None);
                fits.push(None);
                continue;
            };
            let fit = fit_from(data, tau, h, &start, &self.solver)?;
            let value = if fit.converged {
                start.clone_from(&fit.beta);
                sparsity_from_fit(data, x, &fit, self.solver.rank_tol).ok()
            } else {
                None
            };
            values.push(value);
            fits.push(Some(fit));
        }

        Ok(SparsityCurve {
            x: x.to_vec(),
            grid: grid.clone(),
            values,
            bandwidths,
            fits,
        })
    }

    pub fn find_quantile_mode(
        &self,
        data: &Dataset,
        x: &[f64],
        grid: &TauGrid,
        policy: BandwidthPolicy,
    ) -> Result<(f64, SparsityCurve)> {
        let est = self.estimate_mode(data, x, grid, policy)?;
        Ok((est.tau_hat, est.curve))
    }

    pub fn estimate_mode(
        &self,
        data: &Dataset,
        x: &[f64],
        grid: &TauGrid,
        policy: BandwidthPolicy,
    ) -> Result<ModeEstimate> {
        let curve = self.sparsity_curve(data, x, grid, policy)?;
        let best = curve.argmax().ok_or(Error::AllFitsFailed {
            failed: curve.failures(),
        })?;
        let pts = grid.points();
        let grid_tau = pts[best];
        let grid_h = curve.bandwidths[best].expect("valid point has a bandwidth");
        let grid_fit = curve.fits[best].clone().expect("valid point has a fit");
        let grid_s = curve.values[best].expect("argmax is a valid point");

        let mut tau_hat = grid_tau;
        let mut h_hat = grid_h;
        let mut s_hat = grid_s;
        let mut fit_hat = grid_fit.clone();
        let refined = self.refine && pts.len() > 1;

        if refined {
            let lo = if best > 0 { pts[best - 1] } else { grid_tau };
            let hi = if best + 1 < pts.len() { pts[best + 1] } else { grid_tau };
            let h_lo = best
                .checked_sub(1)
                .and_then(|i| curve.bandwidths[i])
                .unwrap_or(grid_h);
            let h_hi = curve
                .bandwidths
                .get(best + 1)
                .copied()
                .flatten()
                .unwrap_or(grid_h);
            // Piecewise-linear bandwidth between neighbouring grid values.
            let bandwidth_at = |tau: f64| {
                if tau <= grid_tau {
                    if grid_tau > lo {
                        h_lo + (grid_h - h_lo) * (tau - lo) / (grid_tau - lo)
                    } else {
                        grid_h
                    }
                } else if hi > grid_tau {
                    grid_h + (h_hi - grid_h) * (tau - grid_tau) / (hi - grid_tau)
                } else {
                    grid_h
                }
            };
            let eval = |tau: f64| -> Option<(f64, f64, SqreFit)> {
                let h = bandwidth_at(tau);
                let fit = fit_from(data, tau, h, &grid_fit.beta, &self.solver).ok()?;
                let s = sparsity_from_fit(data, x, &fit, self.solver.rank_tol).ok()?;
                Some((s, h, fit))
            };
            let (tau_r, s_r) = golden_section_max(
                |tau| eval(tau).map_or(f64::NAN, |(s, _, _)| s),
                lo,
                hi,
                self.refine_tol,
            );
            if s_r > grid_s {
                if let Some((s, h, fit)) = eval(tau_r) {
                    tau_hat = tau_r;
                    h_hat = h;
                    s_hat = s;
                    fit_hat = fit;
                }
            }
        }

        Ok(ModeEstimate {
            x: x.to_vec(),
            tau_hat,
            m_hat: dot(x, &fit_hat.beta),
            h_at_tau_hat: h_hat,
            s_hat,
            fit: fit_hat,
            curve,
            refined,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::INV_SQRT_2PI;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_construction() {
        let g = TauGrid::new(0.05, 0.01).unwrap();
        assert_eq!(g.len(), 91);
        assert_eq!(g.points()[0], 0.05);
        assert_eq!(g.points()[5], 0.1);
        assert_eq!(*g.points().last().unwrap(), 0.95);
        assert!(g.points().windows(2).all(|w| w[1] > w[0]));

        let g = TauGrid::new(0.4, 0.2).unwrap();
        assert_eq!(g.points(), &[0.4, 0.6]);
        let g = TauGrid::new(0.01, 0.01).unwrap();
        assert_eq!(g.len(), 99);

        assert!(TauGrid::new(0.5, 0.1).is_err());
        assert!(TauGrid::new(0.1, 0.0).is_err());
        assert!(TauGrid::from_points(0.1, vec![]).is_err());
        assert!(TauGrid::from_points(0.1, vec![0.5, 0.5]).is_err());
        assert!(TauGrid::from_points(0.1, vec![0.05, 0.5]).is_err());
    }

    #[test]
    fn argmax_prefers_smallest_tie() {
        let grid = TauGrid::from_points(0.1, vec![0.2, 0.4, 0.6]).unwrap();
        let curve = SparsityCurve {
            x: vec![1.0],
            grid,
            values: vec![Some(-2.0), Some(-1.0), Some(-1.0 + 1e-13)],
            bandwidths: vec![Some(1.0); 3],
            fits: vec![None, None, None],
        };
        assert_eq!(curve.argmax(), Some(1));
        let empty = SparsityCurve {
            values: vec![None; 3],
            ..curve
        };
        assert_eq!(empty.argmax(), None);
        assert_eq!(empty.failures(), 3);
    }

    #[test]
    fn identity_hessian_sparsity() {
        // Two identical observations with h = 1/sqrt(2 pi) give D_h = [[1]].
        let data = Dataset::from_rows(vec![1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
        let s = sparsity_at(&data, &[2.0], 0.5, INV_SQRT_2PI).unwrap();
        assert_abs_diff_eq!(s, -2.0, epsilon = 1e-12);
    }

    #[test]
    fn single_point_grid() {
        let xs: Vec<f64> = (0..40).map(|i| 1.0 + 0.1 * i as f64).collect();
        let rows: Vec<f64> = xs.iter().flat_map(|&x| [1.0, x]).collect();
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x + ((i * 7) % 5) as f64 * 0.3).collect();
        let data = Dataset::from_rows(rows, ys, 2).unwrap();
        let grid = TauGrid::from_points(0.05, vec![0.5]).unwrap();
        let est = estimate_mode(&data, &[1.0, 2.0], &grid, BandwidthPolicy::Fixed(0.5)).unwrap();
        assert_eq!(est.tau_hat, 0.5);
        assert!(!est.refined);
        assert_abs_diff_eq!(est.m_hat, dot(&[1.0, 2.0], &est.fit.beta), epsilon = 1e-12);
    }

    #[test]
    fn all_failures_are_reported() {
        let data = Dataset::from_rows(vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let grid = TauGrid::new(0.1, 0.2).unwrap();
        let search = ModeSearch {
            solver: SolverOptions {
                foc_tol: -1.0,
                max_iter: 0,
                ..SolverOptions::default()
            },
            ..ModeSearch::default()
        };
        let err = search
            .estimate_mode(&data, &[1.0], &grid, BandwidthPolicy::Fixed(0.3))
            .unwrap_err();
        assert!(matches!(err, Error::AllFitsFailed { failed: 5 }));
    }

    #[test]
    fn dimension_checks() {
        let data = Dataset::from_rows(vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let grid = TauGrid::new(0.1, 0.2).unwrap();
        assert!(matches!(
            estimate_mode(&data, &[1.0, 2.0], &grid, BandwidthPolicy::Fixed(0.3)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(estimate_mode(&data, &[1.0], &grid, BandwidthPolicy::Fixed(-1.0)).is_err());
    }
}
