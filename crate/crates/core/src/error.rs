use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidTau(f64),

    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("design is rank deficient (smallest eigenvalue of X'X/n is {min_eigenvalue:e})")]
    RankDeficient { min_eigenvalue: f64 },

    #[error("Hessian is singular (smallest eigenvalue {min_eigenvalue:e}); bandwidth may be too small")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("smoothed quantile fit at tau = {tau} did not converge (gradient norm {grad_norm:e})")]
    NonConvergentFit { tau: f64, grad_norm: f64 },

    #[error("quantile regression iteration cannot proceed: {0}")]
    DegenerateDesign(String),

    #[error("residual scale is zero at tau = {tau}; use a fixed bandwidth")]
    DegenerateResiduals { tau: f64 },

    #[error("no grid point produced a usable fit ({failed} failures)")]
    AllFitsFailed { failed: usize },

    #[error("need at least {need} successful replications, got {got}")]
    TooFewReplications { got: usize, need: usize },

    #[error("invalid quantile grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTau(tau))
    }
}

pub(crate) fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}
