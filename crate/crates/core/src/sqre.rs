//! Convolution-smoothed quantile regression.
//!
//! The sample objective is the average Gaussian-smoothed check loss
//! `R_h(b; tau) = n^-1 sum_i (k_h * rho_tau)(Y_i - X_i' b)`, with
//!
//! ```text
//! gradient  n^-1 sum_i X_i [K((X_i' b - Y_i) / h) - tau]
//! Hessian   n^-1 sum_i X_i X_i' k_h(X_i' b - Y_i)
//! ```
//!
//! It is smooth and convex, so [`fit`] runs a damped Newton iteration with
//! Armijo backtracking on the exact Hessian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, min_eigenvalue, symmetrize_lower, Dataset, DEFAULT_RANK_TOL};
use crate::error::{check_bandwidth, check_tau, Error, Result};
use crate::kernel::{kernel_cdf, INV_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on the Euclidean norm of the gradient.
    pub foc_tol: f64,
    pub max_iter: usize,
    /// Smallest admissible Hessian eigenvalue when inverting it.
    pub rank_tol: f64,
    /// Sufficient-decrease constant of the Armijo rule.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            foc_tol: 1e-8,
            max_iter: 100,
            rank_tol: DEFAULT_RANK_TOL,
            armijo: 1e-4,
            max_backtracks: 60,
        }
    }
}

/// Result of a smoothed quantile regression fit at `(tau, h)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqreFit {
    pub tau: f64,
    pub h: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Number of Newton steps taken with a ridge-regularised Hessian.
    pub ridge_steps: usize,
}

impl SqreFit {
    /// Fitted conditional quantile `x' beta` at a design point.
    pub fn predict(&self, x: &[f64]) -> f64 {
        dot(x, &self.beta)
    }
}

struct Evaluation {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn check_args(data: &Dataset, b: &[f64], tau: f64, h: f64) -> Result<()> {
    check_tau(tau)?;
    check_bandwidth(h)?;
    data.check_dim(b.len())
}

/// Smoothed loss of one residual given `Phi(r/h)` and `phi(r/h)`, with
/// `r = x'b - y`.
#[inline]
fn smoothed_term(r: f64, cdf: f64, pdf: f64, tau: f64, h: f64) -> f64 {
    // u = -r; u * (tau - 1 + Phi(u/h)) + h phi(u/h), and Phi(-r/h) = 1 - Phi(r/h).
    -r * (tau - cdf) + h * pdf
}

fn value_unchecked(data: &Dataset, b: &[f64], tau: f64, h: f64) -> f64 {
    let mut total = 0.0;
    for (row, y) in data.rows() {
        let r = dot(row, b) - y;
        let c = r / h;
        let pdf = INV_SQRT_2PI * (-0.5 * c * c).exp();
        total += smoothed_term(r, kernel_cdf(c), pdf, tau, h);
    }
    total / data.n() as f64
}

fn evaluate(data: &Dataset, b: &[f64], tau: f64, h: f64) -> Evaluation {
    let d = data.d();
    let mut value = 0.0;
    let mut grad = DVector::zeros(d);
    let mut hess = DMatrix::zeros(d, d);
    for (row, y) in data.rows() {
        let r = dot(row, b) - y;
        let c = r / h;
        let pdf = INV_SQRT_2PI * (-0.5 * c * c).exp();
        let cdf = kernel_cdf(c);
        value += smoothed_term(r, cdf, pdf, tau, h);
        let g = cdf - tau;
        let w = pdf / h;
        for a in 0..d {
            grad[a] += row[a] * g;
            let wa = w * row[a];
            for bb in 0..=a {
                hess[(a, bb)] += wa * row[bb];
            }
        }
    }
    symmetrize_lower(&mut hess);
    let n = data.n() as f64;
    Evaluation {
        value: value / n,
        grad: grad / n,
        hess: hess / n,
    }
}

/// Smoothed objective `R_h(b; tau)`.
pub fn objective(data: &Dataset, b: &[f64], tau: f64, h: f64) -> Result<f64> {
    check_args(data, b, tau, h)?;
    Ok(value_unchecked(data, b, tau, h))
}

/// Gradient of [`objective`] with respect to `b`.
pub fn gradient(data: &Dataset, b: &[f64], tau: f64, h: f64) -> Result<DVector<f64>> {
    check_args(data, b, tau, h)?;
    let mut grad = DVector::zeros(data.d());
    for (row, y) in data.rows() {
        let g = kernel_cdf((dot(row, b) - y) / h) - tau;
        for (acc, x) in grad.iter_mut().zip(row) {
            *acc += x * g;
        }
    }
    Ok(grad / data.n() as f64)
}

/// Hessian of [`objective`]; it does not depend on `tau`, which is only
/// validated.
pub fn hessian(data: &Dataset, b: &[f64], tau: f64, h: f64) -> Result<DMatrix<f64>> {
    check_args(data, b, tau, h)?;
    Ok(hessian_unchecked(data, b, h))
}

pub(crate) fn hessian_unchecked(data: &Dataset, b: &[f64], h: f64) -> DMatrix<f64> {
    let d = data.d();
    let mut hess = DMatrix::zeros(d, d);
    for (row, y) in data.rows() {
        let c = (dot(row, b) - y) / h;
        let w = INV_SQRT_2PI * (-0.5 * c * c).exp() / h;
        for a in 0..d {
            let wa = w * row[a];
            for bb in 0..=a {
                hess[(a, bb)] += wa * row[bb];
            }
        }
    }
    symmetrize_lower(&mut hess);
    hess / data.n() as f64
}

/// Ordinary least squares coefficients, used as the default starting point.
pub fn least_squares(data: &Dataset) -> Result<Vec<f64>> {
    let d = data.d();
    let mut xty = DVector::zeros(d);
    for (row, y) in data.rows() {
        for (acc, x) in xty.iter_mut().zip(row) {
            *acc += x * y;
        }
    }
    let gram = data.gram() * data.n() as f64;
    let chol = gram.cholesky().ok_or_else(|| Error::RankDeficient {
        min_eigenvalue: data.gram_min_eigenvalue(),
    })?;
    Ok(chol.solve(&xty).as_slice().to_vec())
}

/// Newton direction `-H^-1 g`, with a ridge when `H` is nearly singular.
/// Returns `None` when the Hessian carries no usable curvature.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    let d = hess.nrows();
    let trace = hess.trace();
    if !(trace > f64::MIN_POSITIVE) || !trace.is_finite() {
        return None;
    }
    let mut h = hess.clone();
    let mut ridged = false;
    if min_eigenvalue(&h) < 1e-10 * trace {
        let ridge = 1e-8 * trace / d as f64;
        for i in 0..d {
            h[(i, i)] += ridge;
        }
        ridged = true;
    }
    let chol = h.cholesky()?;
    let p = -chol.solve(grad);
    p.iter().all(|v| v.is_finite()).then_some((p, ridged))
}

/// Fits the smoothed quantile regression at `(tau, h)` starting from least
/// squares.
pub fn fit(data: &Dataset, tau: f64, h: f64, opts: &SolverOptions) -> Result<SqreFit> {
    check_tau(tau)?;
    check_bandwidth(h)?;
    let start = least_squares(data)?;
    fit_from(data, tau, h, &start, opts)
}

/// Fits from a caller-supplied starting point (warm start).
///
/// Hitting `max_iter` or stalling in the line search is not an error: the
/// last (lowest-objective) iterate is returned with `converged = false`.
pub fn fit_from(
    data: &Dataset,
    tau: f64,
    h: f64,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<SqreFit> {
    check_args(data, start, tau, h)?;
    let mut b = DVector::from_column_slice(start);
    let mut ev = evaluate(data, b.as_slice(), tau, h);
    let mut iterations = 0;
    let mut ridge_steps = 0;
    let mut converged = false;

    loop {
        let gnorm = ev.grad.norm();
        if gnorm <= opts.foc_tol {
            converged = true;
            // One more full step makes the solution accurate to rounding
            // rather than to the stopping tolerance.
            if gnorm > 0.0 {
                if let Some((p, _)) = newton_direction(&ev.hess, &ev.grad) {
                    let cand = &b + p;
                    let ev_c = evaluate(data, cand.as_slice(), tau, h);
                    if ev_c.grad.norm() < gnorm && ev_c.value.is_finite() {
                        b = cand;
                        ev = ev_c;
                        iterations += 1;
                    }
                }
            }
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let slack = 8.0 * f64::EPSILON * ev.value.abs();
        let mut accepted = None;
        if let Some((p, ridged)) = newton_direction(&ev.hess, &ev.grad) {
            let slope = ev.grad.dot(&p);
            if slope < 0.0 {
                accepted = backtrack(data, &b, &p, 1.0, slope, ev.value, slack, tau, h, opts);
                if accepted.is_some() && ridged {
                    ridge_steps += 1;
                }
            }
        }
        if accepted.is_none() {
            // Steepest descent with an initial step of length max(1, |b|).
            let p = -&ev.grad;
            let t0 = b.norm().max(1.0) / gnorm;
            accepted = backtrack(data, &b, &p, t0, -gnorm * gnorm, ev.value, slack, tau, h, opts);
        }
        match accepted {
            Some(next) => {
                b = next;
                ev = evaluate(data, b.as_slice(), tau, h);
                iterations += 1;
            }
            None => break,
        }
    }

    Ok(SqreFit {
        tau,
        h,
        beta: b.as_slice().to_vec(),
        objective: ev.value,
        grad_norm: ev.grad.norm(),
        iterations,
        converged,
        ridge_steps,
    })
}

#[allow(clippy::too_many_arguments)]
fn backtrack(
    data: &Dataset,
    b: &DVector<f64>,
    p: &DVector<f64>,
    t0: f64,
    slope: f64,
    f0: f64,
    slack: f64,
    tau: f64,
    h: f64,
    opts: &SolverOptions,
) -> Option<DVector<f64>> {
    let mut t = t0;
    for _ in 0..=opts.max_backtracks {
        let cand = b + p * t;
        let f = value_unchecked(data, cand.as_slice(), tau, h);
        if f.is_finite() && f <= f0 + opts.armijo * t * slope + slack {
            return Some(cand);
        }
        t *= 0.5;
    }
    None
}

/// Derivative of the fitted coefficients in `tau`: solves
/// `D_h(tau) beta'(tau) = X-bar` with `D_h` the Hessian at the fit.
pub fn beta_deriv(data: &Dataset, fit: &SqreFit) -> Result<DVector<f64>> {
    beta_deriv_with_tol(data, fit, DEFAULT_RANK_TOL)
}

pub fn beta_deriv_with_tol(data: &Dataset, fit: &SqreFit, rank_tol: f64) -> Result<DVector<f64>> {
    if !fit.converged {
        return Err(Error::NonConvergentFit {
            tau: fit.tau,
            grad_norm: fit.grad_norm,
        });
    }
    data.check_dim(fit.beta.len())?;
    let d_hat = hessian_unchecked(data, &fit.beta, fit.h);
    solve_spd(&d_hat, data.x_mean(), rank_tol)
}

/// Solves `m v = rhs` for a symmetric positive definite `m`, failing with
/// `SingularHessian` when its smallest eigenvalue is below `rank_tol`.
pub(crate) fn solve_spd(m: &DMatrix<f64>, rhs: &[f64], rank_tol: f64) -> Result<DVector<f64>> {
    let min_eig = min_eigenvalue(m);
    if !(min_eig >= rank_tol) {
        return Err(Error::SingularHessian {
            min_eigenvalue: min_eig,
        });
    }
    let chol = m.clone().cholesky().ok_or(Error::SingularHessian {
        min_eigenvalue: min_eig,
    })?;
    let v = chol.solve(&DVector::from_column_slice(rhs));
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::SingularHessian {
            min_eigenvalue: min_eig,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single() -> Dataset {
        // n must exceed d, so duplicate the single observation.
        Dataset::from_rows(vec![1.0, 1.0], vec![0.0, 0.0], 1).unwrap()
    }

    #[test]
    fn single_observation_values() {
        let data = single();
        assert_abs_diff_eq!(objective(&data, &[0.0], 0.5, 1.0).unwrap(), INV_SQRT_2PI, epsilon = 1e-12);
        assert_abs_diff_eq!(gradient(&data, &[0.0], 0.5, 1.0).unwrap()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gradient(&data, &[10.0], 0.5, 0.1).unwrap()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(hessian(&data, &[0.0], 0.5, 1.0).unwrap()[(0, 0)], INV_SQRT_2PI, epsilon = 1e-12);
    }

    #[test]
    fn argument_validation() {
        let data = single();
        assert!(matches!(
            objective(&data, &[0.0, 1.0], 0.5, 1.0),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
        assert!(gradient(&data, &[0.0], 0.0, 1.0).is_err());
        assert!(hessian(&data, &[0.0], 0.5, -1.0).is_err());
        assert!(fit(&data, 1.0, 1.0, &SolverOptions::default()).is_err());
    }

    #[test]
    fn hessian_ignores_tau() {
        let data = Dataset::from_rows(vec![1.0, 2.0, 1.0, 3.0, 1.0, 4.5], vec![0.3, 1.2, 2.0], 2).unwrap();
        let a = hessian(&data, &[0.1, 0.4], 0.2, 0.5).unwrap();
        let b = hessian(&data, &[0.1, 0.4], 0.8, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_hessian_gives_unit_derivative() {
        // k_h(0) = 1 when h = 1/sqrt(2 pi).
        let data = single();
        let h = INV_SQRT_2PI;
        let f = fit_from(&data, 0.5, h, &[0.0], &SolverOptions::default()).unwrap();
        assert!(f.converged);
        assert_abs_diff_eq!(hessian(&data, &f.beta, 0.5, h).unwrap()[(0, 0)], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(beta_deriv(&data, &f).unwrap()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn beta_deriv_requires_convergence() {
        let data = single();
        let mut f = fit(&data, 0.5, 1.0, &SolverOptions::default()).unwrap();
        f.converged = false;
        assert!(matches!(beta_deriv(&data, &f), Err(Error::NonConvergentFit { .. })));
    }

    #[test]
    fn singular_hessian_is_reported() {
        // Residuals far beyond the bandwidth leave no curvature.
        let data = Dataset::from_rows(vec![1.0, 1.0, 1.0], vec![-100.0, 0.0, 100.0], 1).unwrap();
        let f = SqreFit {
            tau: 0.5,
            h: 1e-3,
            beta: vec![50.0],
            objective: 0.0,
            grad_norm: 0.0,
            iterations: 0,
            converged: true,
            ridge_steps: 0,
        };
        assert!(matches!(beta_deriv(&data, &f), Err(Error::SingularHessian { .. })));
    }

    #[test]
    fn intercept_only_fit_matches_smoothed_quantile() {
        let ys: Vec<f64> = (0..21).map(|i| i as f64).collect();
        let data = Dataset::from_rows(vec![1.0; 21], ys, 1).unwrap();
        let f = fit(&data, 0.5, 0.5, &SolverOptions::default()).unwrap();
        assert!(f.converged && f.grad_norm <= 1e-8);
        assert_abs_diff_eq!(f.beta[0], 10.0, epsilon = 1e-9);
    }
}
