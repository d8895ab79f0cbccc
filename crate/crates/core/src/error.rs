//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Point configuration too degenerate for the requested operation
    /// (fewer than 3 points, collinear/coincident clouds, ...).
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Non-finite value produced where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Fracture generation could not produce a valid split.
    #[error("generation failure: {0}")]
    GenerationFailure(String),

    /// Training loss exceeded the divergence bound.
    #[error("training diverged at epoch {epoch}: total loss {total}")]
    TrainingDiverged { epoch: usize, total: f64 },

    /// On-disk artifact violates its schema.
    #[error("schema violation in {path}: {reason}")]
    SchemaViolation { path: String, reason: String },

    /// On-disk artifact has an unsupported format version.
    #[error("version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: String,
        expected: String,
    },

    /// Binary file ended before the named section was complete.
    #[error("truncated file {path}: missing or incomplete section `{section}`")]
    Truncated { path: String, section: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
