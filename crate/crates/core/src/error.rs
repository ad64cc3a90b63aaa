use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum CodaError {
    /// Input data or configuration violates a documented precondition.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// A decision rule does not fit the data it is applied to.
    #[error("structural error: {0}")]
    Structure(String),
    /// A fit or a matrix computation broke down.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("csv error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: String,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CodaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CodaError::Invalid(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        CodaError::Numeric(msg.into())
    }

    /// True for failures of numerical routines rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, CodaError::Numeric(_))
    }
}

pub type Result<T> = std::result::Result<T, CodaError>;
