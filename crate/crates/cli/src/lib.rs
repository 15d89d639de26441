//! Command-line front end: CSV ingestion, model fitting, mode estimation
//! and the simulation study.
//!
//! Exit codes: 0 success, 1 input error, 2 non-convergence, 3 estimation
//! failure.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod manifest;

pub use commands::{run, Cli, Command};
pub use error::{CliError, CliResult};
