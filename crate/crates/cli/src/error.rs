use convmode::Error as CoreError;

/// Failures surfaced by the command-line front end, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input, unwritable output.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NonConvergence(String),
    /// The data were valid but the estimator could not produce a value.
    #[error("{0}")]
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Estimation(_) => 3,
        }
    }

    pub(crate) fn io(what: &str, path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Input(format!("cannot {what} {}: {e}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::NonConvergentFit { .. } => CliError::NonConvergence(msg),
            CoreError::AllFitsFailed { .. }
            | CoreError::DegenerateResiduals { .. }
            | CoreError::SingularHessian { .. }
            | CoreError::TooFewReplications { .. } => CliError::Estimation(msg),
            _ => CliError::Input(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
