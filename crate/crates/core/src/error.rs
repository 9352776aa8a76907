use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { what: String, step: Option<u64> },

    #[error("cache does not belong to the current parameters ({0})")]
    StaleCache(String),

    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("unknown environment `{0}`")]
    UnknownEnv(String),

    #[error("format error in {field}: {message}")]
    Format { field: String, message: String },

    #[error("config mismatch: field `{field}` differs from the checkpoint")]
    ConfigMismatch { field: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite {
            what: what.into(),
            step: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches a training step index to a non-finite abort.
    pub fn at_step(self, step: u64) -> Self {
        match self {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                step: Some(step),
            },
            other => other,
        }
    }
}
