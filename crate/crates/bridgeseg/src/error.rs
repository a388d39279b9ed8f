use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// Configuration problems are usage errors (a caller passed bad parameters or
/// a bad config file); everything else is a runtime failure. The CLI maps the
/// two classes to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("domain: {0}")]
    Domain(String),

    #[error("instance id {0} not present in label map")]
    MissingInstance(u32),

    #[error("numeric: non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("generation: {0}")]
    Generation(String),

    #[error("inference step {step} (t={t}): {source}")]
    InferenceStep {
        step: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error is a usage/configuration problem rather than a
    /// runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
