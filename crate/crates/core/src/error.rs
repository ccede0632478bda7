use thiserror::Error;

/// Errors produced by the estimation, scheduling, attack and defense routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("system {system}: field {field}: {reason}")]
    Validation {
        system: usize,
        field: &'static str,
        reason: String,
    },

    #[error("no convergence after {iterations} iterations (last residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration of {required} candidates exceeds budget {budget}; {hint}")]
    Budget {
        required: u128,
        budget: u64,
        hint: &'static str,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
