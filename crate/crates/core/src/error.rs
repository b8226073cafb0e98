use thiserror::Error;

/// Errors raised by model validation, the filters and the numerical solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// An input failed validation. `field` is a dotted path into the offending value.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// A scalar argument is outside its admissible range.
    #[error("argument out of range: {0}")]
    Argument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: String,
        got: String,
    },

    /// The model is valid but outside what the requested method supports.
    #[error("unsupported model: {0}")]
    Unsupported(String),

    /// A solver failed to produce a certified result (no sign change, no convergence, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn dimension(
        context: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Numerical failures are reported separately from bad input by the CLI.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }

    /// Prefix the field path of a validation error, leaving other variants untouched.
    pub fn within(self, parent: &str) -> Self {
        match self {
            Error::Validation { field, reason } => Error::Validation {
                field: format!("{parent}.{field}"),
                reason,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
