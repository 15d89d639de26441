use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Default threshold on the smallest eigenvalue of `X'X / n`.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Design matrix and response, stored row-major.
///
/// Construction rejects non-finite values, `n <= d` and rank-deficient
/// designs. Non-positive covariates are allowed; they are reported by
/// [`Dataset::positivity_warnings`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    x_mean: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major design entries (`n * d` values).
    pub fn from_rows(x: Vec<f64>, y: Vec<f64>, d: usize) -> Result<Self> {
        Self::with_rank_tol(x, y, d, DEFAULT_RANK_TOL)
    }

    pub fn with_rank_tol(x: Vec<f64>, y: Vec<f64>, d: usize, rank_tol: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("design has no columns".into()));
        }
        let n = y.len();
        if x.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: x.len(),
            });
        }
        if n <= d {
            return Err(Error::InvalidDataset(format!(
                "need more observations than covariates (n = {n}, d = {d})"
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite covariate at row {}, column {}",
                i / d,
                i % d
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite response at row {i}")));
        }
        let mut x_mean = vec![0.0; d];
        for row in x.chunks_exact(d) {
            for (m, v) in x_mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut x_mean {
            *m /= n as f64;
        }
        let data = Self { n, d, x, y, x_mean };
        let min_eig = data.gram_min_eigenvalue();
        if !(min_eig > rank_tol) {
            return Err(Error::RankDeficient {
                min_eigenvalue: min_eig,
            });
        }
        Ok(data)
    }

    /// Builds a dataset from a column-major design matrix.
    pub fn from_matrix(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let d = x.ncols();
        let mut rows = Vec::with_capacity(x.nrows() * d);
        for i in 0..x.nrows() {
            rows.extend(x.row(i).iter().copied());
        }
        Self::from_rows(rows, y.as_slice().to_vec(), d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.x.chunks_exact(self.d).zip(self.y.iter().copied())
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    /// Column means of the design, `X-bar`.
    pub fn x_mean(&self) -> &[f64] {
        &self.x_mean
    }

    pub fn design_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.d, &self.x)
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.d, self.d);
        for row in self.x.chunks_exact(self.d) {
            for a in 0..self.d {
                for b in 0..=a {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        symmetrize_lower(&mut g);
        g / self.n as f64
    }

    pub fn gram_min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.gram())
    }

    /// Linear predictor `x' b` for every row.
    pub fn fitted(&self, b: &[f64]) -> Vec<f64> {
        self.x.chunks_exact(self.d).map(|row| dot(row, b)).collect()
    }

    /// Returns a copy with the response replaced by `f(y)`.
    pub fn map_response(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.y {
            *v = f(*v);
        }
        out
    }

    /// Messages for covariate columns that are not strictly positive.
    ///
    /// Positivity is part of the regularity conditions of the estimator
    /// but the formulas remain computable without it.
    pub fn positivity_warnings(&self) -> Vec<String> {
        (0..self.d)
            .filter_map(|j| {
                let bad = self
                    .x
                    .chunks_exact(self.d)
                    .filter(|row| !(row[j] > 0.0))
                    .count();
                (bad > 0).then(|| {
                    format!("covariate column {j} has {bad} non-positive value(s)")
                })
            })
            .collect()
    }

    pub(crate) fn check_dim(&self, len: usize) -> Result<()> {
        if len == self.d {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.d,
                found: len,
            })
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn symmetrize_lower(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for a in 0..d {
        for b in (a + 1)..d {
            m[(a, b)] = m[(b, a)];
        }
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
