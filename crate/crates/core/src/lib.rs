//! Conditional mode regression through convolution-smoothed quantile regression.
//!
//! The estimator works in three steps. For each quantile level `tau` on a
//! grid, the smoothed check loss is minimised (see [`sqre`]). The Hessian of
//! that objective at the solution is a kernel estimate of the conditional
//! density along the fitted quantile, which gives the sample sparsity
//! `s(tau) = -x' D(tau)^-1 mean(X)` (see [`mode`]). The quantile level that
//! maximises the sparsity is the conditional quantile mode, and the fitted
//! quantile curve evaluated there is the mode estimate.
//!
//! The [`dgp`] and [`montecarlo`] modules carry a heteroscedastic
//! skew-normal simulation design with closed-form population quantities,
//! used to check the estimator end to end.

pub mod bandwidth;
pub mod data;
pub mod dgp;
pub mod error;
pub mod kernel;
pub mod mode;
pub mod montecarlo;
pub mod optim;
pub mod qr_baseline;
pub mod quadrature;
pub mod sqre;
pub mod stats;

pub use bandwidth::{rot_bandwidth, RotBandwidth};
pub use data::Dataset;
pub use dgp::{PopulationOracle, SimConfig, SkewNormalStd};
pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec};
pub use mode::{BandwidthPolicy, ModeEstimate, ModeSearch, SparsityCurve, TauGrid};
pub use montecarlo::{QqTable, SimResult};
pub use qr_baseline::QrFit;
pub use sqre::{SolverOptions, SqreFit};
