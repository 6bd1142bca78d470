use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum GviError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported parameter combination: {0}")]
    Unsupported(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("reference policy has no mass at state {state}, action {action}")]
    InfiniteKl { state: usize, action: usize },

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GviError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            GviError::InvalidInput(_)
            | GviError::InvalidParameter(_)
            | GviError::Unsupported(_)
            | GviError::InfiniteKl { .. }
            | GviError::Json(_) => 1,
            GviError::Convergence { .. }
            | GviError::Numerical(_)
            | GviError::DegenerateMetric(_) => 2,
            GviError::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, GviError>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> GviError {
    GviError::InvalidInput(msg.into())
}

pub(crate) fn invalid_param(msg: impl Into<String>) -> GviError {
    GviError::InvalidParameter(msg.into())
}
