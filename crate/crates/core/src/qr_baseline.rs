//! Unsmoothed (canonical) linear quantile regression.
//!
//! Only the residuals are consumed downstream, by the rule-of-thumb
//! bandwidth. The solver is iteratively reweighted least squares on a
//! Huberised check loss `|u|/2 + (tau - 1/2) u`, where `|u|` is replaced by
//! its Huber approximation with threshold `eps`. `eps` shrinks from `1e-2` to
//! `1e-8` times the starting residual scale. The final iterate is snapped to
//! the basic solution that interpolates the `d` smallest residuals whenever
//! that does not increase the check loss.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, symmetrize_lower, Dataset};
use crate::error::{check_tau, Error, Result};
use crate::kernel::check_loss_unchecked;
use crate::sqre::least_squares;

const MAX_INNER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrFit {
    pub tau: f64,
    pub beta: Vec<f64>,
    /// Check-loss objective `n^-1 sum rho_tau(Y_i - X_i' beta)`.
    pub objective_value: f64,
}

/// Sample check-loss objective.
pub fn check_objective(data: &Dataset, b: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    data.check_dim(b.len())?;
    Ok(objective_unchecked(data, b, tau))
}

fn objective_unchecked(data: &Dataset, b: &[f64], tau: f64) -> f64 {
    data.rows()
        .map(|(row, y)| check_loss_unchecked(y - dot(row, b), tau))
        .sum::<f64>()
        / data.n() as f64
}

pub fn fit_canonical(data: &Dataset, tau: f64) -> Result<QrFit> {
    fit_canonical_from(data, tau, None)
}

/// Like [`fit_canonical`], optionally warm-started (e.g. from the fit at a
/// neighbouring quantile level).
pub fn fit_canonical_from(data: &Dataset, tau: f64, start: Option<&[f64]>) -> Result<QrFit> {
    check_tau(tau)?;
    let mut b = match start {
        Some(s) => {
            data.check_dim(s.len())?;
            s.to_vec()
        }
        None => least_squares(data).map_err(|e| Error::DegenerateDesign(e.to_string()))?,
    };
    let d = data.d();
    let n = data.n() as f64;

    let scale = data
        .rows()
        .map(|(row, y)| (y - dot(row, &b)).abs())
        .sum::<f64>()
        / n;

    // A (numerically) exact fit needs no reweighting; the weights would
    // overflow.
    let y_scale = data.response().iter().map(|y| y.abs()).sum::<f64>() / n;
    if scale > 1e-12 * y_scale {
        let mut x_sum = DVector::zeros(d);
        for (row, _) in data.rows() {
            for (acc, x) in x_sum.iter_mut().zip(row) {
                *acc += x;
            }
        }
        let tilt = x_sum * (2.0 * tau - 1.0);

        'outer: for k in 2..=8 {
            let eps = scale * 10f64.powi(-k);
            for _ in 0..MAX_INNER {
                let mut a = DMatrix::zeros(d, d);
                let mut rhs = tilt.clone();
                for (row, y) in data.rows() {
                    let r = y - dot(row, &b);
                    let w = 1.0 / r.abs().max(eps);
                    for i in 0..d {
                        let wi = w * row[i];
                        rhs[i] += wi * y;
                        for j in 0..=i {
                            a[(i, j)] += wi * row[j];
                        }
                    }
                }
                symmetrize_lower(&mut a);
                // Extreme weights can make the system numerically singular
                // near an exact fit; keep the current iterate then.
                let Some(chol) = a.cholesky() else {
                    break 'outer;
                };
                let next = chol.solve(&rhs);
                if next.iter().any(|v| !v.is_finite()) {
                    break 'outer;
                }
                let step = next
                    .iter()
                    .zip(&b)
                    .map(|(u, v)| (u - v).abs())
                    .fold(0.0, f64::max);
                b.copy_from_slice(next.as_slice());
                if step <= 1e-3 * eps {
                    break;
                }
            }
        }
    }

    let mut objective_value = objective_unchecked(data, &b, tau);
    if let Some(basic) = basic_solution(data, &b) {
        let v = objective_unchecked(data, &basic, tau);
        if v <= objective_value {
            b = basic;
            objective_value = v;
        }
    }

    Ok(QrFit {
        tau,
        beta: b,
        objective_value,
    })
}

/// Coefficients interpolating the `d` observations with the smallest
/// absolute residuals at `b`, if that subsystem is nonsingular.
fn basic_solution(data: &Dataset, b: &[f64]) -> Option<Vec<f64>> {
    let d = data.d();
    let mut idx: Vec<(f64, usize)> = data
        .rows()
        .enumerate()
        .map(|(i, (row, y))| ((y - dot(row, b)).abs(), i))
        .collect();
    idx.select_nth_unstable_by(d - 1, |p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let mut basis: Vec<usize> = idx[..d].iter().map(|p| p.1).collect();
    basis.sort_unstable();
    let mut m = DMatrix::zeros(d, d);
    let mut rhs = DVector::zeros(d);
    for (k, &i) in basis.iter().enumerate() {
        for (j, v) in data.row(i).iter().enumerate() {
            m[(k, j)] = *v;
        }
        rhs[k] = data.response()[i];
    }
    let sol = m.lu().solve(&rhs)?;
    sol.iter()
        .all(|v| v.is_finite())
        .then(|| sol.as_slice().to_vec())
}

/// Residuals `Y_i - X_i' beta` of a canonical fit.
pub fn residuals(data: &Dataset, fit: &QrFit) -> Result<Vec<f64>> {
    data.check_dim(fit.beta.len())?;
    Ok(data
        .rows()
        .map(|(row, y)| y - dot(row, &fit.beta))
        .collect())
}
