use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum DmlError {
    /// A required column or role is absent from the input.
    #[error("schema error: {0}")]
    Schema(String),
    /// A cell could not be parsed as a number.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    /// Data violates an invariant (missing values, non-binary treatment, unbalanced panel, ...).
    #[error("validation error: {0}")]
    Validation(String),
    /// A caller-supplied argument is outside its legal range.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The moment equation does not pin down the parameter.
    #[error("identification error: {0}")]
    Identification(String),
    /// A numerical routine failed (singular matrix, non-finite result, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Run configuration is malformed.
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DmlError>;

impl DmlError {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        DmlError::Argument(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        DmlError::Validation(msg.into())
    }

    pub(crate) fn ident(msg: impl Into<String>) -> Self {
        DmlError::Identification(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        DmlError::Numerical(msg.into())
    }
}
