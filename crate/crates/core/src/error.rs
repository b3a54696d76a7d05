use thiserror::Error;

/// Errors raised by the numerical modules.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a function (e.g. a negative photon number).
    #[error("domain error: {0}")]
    Domain(String),

    /// Operands with incompatible dimensions.
    #[error("dimension mismatch: {left} vs {right}")]
    Shape { left: usize, right: usize },

    /// A computation that would exceed the supported truncation or memory limits.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// A parameter that violates a type invariant. `field` names the offending input.
    #[error("invalid `{field}`: {reason}")]
    InvalidParam { field: String, reason: String },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
