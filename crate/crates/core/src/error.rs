//! Crate-wide error type.

use thiserror::Error;

/// Alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix/vector shapes do not line up with the model or with each other.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input value is outside its documented domain (non-finite entries,
    /// fractions out of range, non-positive kernel widths, ...).
    #[error("invalid value: {0}")]
    Invalid(String),

    /// A configuration field fails validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A data row does not have the expected number of fields.
    #[error("line {line}: expected {expected} fields, found {found}")]
    WrongFieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    /// A feature field could not be parsed as a number.
    #[error("line {line}, field {field}: not a number: {value:?}")]
    BadFeature {
        line: usize,
        field: usize,
        value: String,
    },

    /// The diagnosis field is neither `M` nor `B`.
    #[error("line {line}: unknown diagnosis {value:?} (expected M or B)")]
    BadDiagnosis { line: usize, value: String },

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    /// The inverse of an activation was requested outside its domain.
    #[error("activation inverse domain error: {0}")]
    ActivationDomain(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
