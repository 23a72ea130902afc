use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{what} out of range: {value} (valid: {valid})")]
    Range {
        what: &'static str,
        value: i64,
        valid: String,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("unknown {0}")]
    Lookup(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value in {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    #[error("arithmetic error: {0}")]
    Arithmetic(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn range(what: &'static str, value: usize, valid: impl Into<String>) -> Self {
        Error::Range {
            what,
            value: value as i64,
            valid: valid.into(),
        }
    }

    pub(crate) fn shape(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than
    /// numerical failure during a run.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Numeric(_) | Error::DegenerateMetric(_) | Error::Arithmetic(_)
        )
    }
}

impl From<ndarray::ShapeError> for Error {
    fn from(e: ndarray::ShapeError) -> Self {
        Error::Shape {
            context: "array reshape",
            expected: "compatible shapes".into(),
            actual: e.to_string(),
        }
    }
}
