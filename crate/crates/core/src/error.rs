use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A configuration value is out of its valid domain.
    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    /// The discretization cannot represent the requested optics faithfully.
    #[error("sampling inadequate for `{parameter}`: {reason} (hint: {hint})")]
    Sampling {
        parameter: String,
        reason: String,
        hint: String,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid too large for dense representation: {pixels} pixels (limit {limit})")]
    GridTooLarge { pixels: usize, limit: usize },

    #[error("accumulator mode mismatch: expected {expected}, found {found}")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("need at least {required} frames, have {available}")]
    InsufficientFrames { required: u64, available: u64 },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("non-finite value produced in {0}")]
    NonFinite(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn sampling(
        parameter: impl Into<String>,
        reason: impl Into<String>,
        hint: impl Into<String>,
    ) -> Self {
        Error::Sampling {
            parameter: parameter.into(),
            reason: reason.into(),
            hint: hint.into(),
        }
    }

    /// Errors caused by numerics rather than by the user's configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Sampling { .. } | Error::NotConverged { .. } | Error::NonFinite(_) | Error::Degenerate(_)
        )
    }
}
