//! Crate-wide error type.
//!
//! Errors split into two broad families that the CLI maps onto exit codes:
//! configuration/usage problems (bad geometry, bad flags, bad indices) and
//! runtime failures (I/O, corrupt files, numeric contract violations).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or geometry mismatch between tensors or between data and model.
    #[error("{op}: shape mismatch: {msg}")]
    Shape { op: &'static str, msg: String },

    /// Invalid configuration value (hyperparameter, spec field, CLI flag).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input value outside the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Violation of an autodiff contract (e.g. backward from a non-scalar).
    #[error("autodiff contract violated: {0}")]
    Autodiff(String),

    /// Malformed or corrupt on-disk data, with the offending byte offset.
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format {
        path: String,
        offset: u64,
        msg: String,
    },

    /// Checkpoint manifest/blob inconsistency or model incompatibility.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Name not found in a registry (parameter, subject, channel).
    #[error("unknown {kind}: {name}")]
    Lookup { kind: &'static str, name: String },

    /// Failure inside one leave-one-subject-out fold, tagged with the
    /// held-out subject.
    #[error("fold for subject {id}: {source}")]
    Subject {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by how the program was invoked rather than by
    /// what happened while it ran. The CLI exits 2 for these, 1 otherwise.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Shape { .. } | Error::Config(_) | Error::Domain(_) | Error::Lookup { .. } => {
                true
            }
            Error::Subject { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
