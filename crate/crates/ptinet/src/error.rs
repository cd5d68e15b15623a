//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PtiError>;

#[derive(Debug, Error)]
pub enum PtiError {
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },

    #[error("unknown value {value:?} for attribute field {field:?}")]
    UnknownAttribute { field: String, value: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("bad file format in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("non-finite {what} at epoch {epoch}, step {step}")]
    NonFinite {
        what: String,
        epoch: usize,
        step: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Other(String),
}

impl PtiError {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        PtiError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
