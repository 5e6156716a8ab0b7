use std::path::PathBuf;

/// Errors produced by the planner library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("invalid anchor file {path}: {message}")]
    Anchors { path: PathBuf, message: String },

    /// A field violates a documented invariant. `field` is a dotted path
    /// such as `pair.acceptance_rate`.
    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exact vote enumeration needs {outcomes:.3e} outcome vectors (limit {limit:.0e}); use the Monte Carlo estimator")]
    EnumerationGuard { outcomes: f64, limit: f64 },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
