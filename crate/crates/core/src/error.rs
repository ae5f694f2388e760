use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    /// Structural problem with a network; `location` names the layer or field.
    #[error("invalid network ({location}): {message}")]
    Validation { location: String, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("input component {index} = {value} lies outside [{lo}, {hi}]")]
    OutOfDomain {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("invalid query: {0}")]
    Query(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("oracle cost guard: {0}")]
    Guard(String),

    #[error("MPS error on line {line}: {message}")]
    Mps { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn validation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            location: location.into(),
            message: message.into(),
        }
    }
}
