//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Precondition or invariant violation in an operation's inputs.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Native volume/label header could not be parsed or holds illegal values.
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: String, reason: String },

    /// Declared shape and raw payload byte count disagree.
    #[error("payload mismatch in {path}: expected {expected} bytes, found {actual}")]
    PayloadMismatch {
        path: String,
        expected: usize,
        actual: usize,
    },

    /// NIfTI ingestion failure (unsupported datatype, dimensionality, magic).
    #[error("nifti ingestion error in {path}: {reason}")]
    Ingest { path: String, reason: String },

    /// Training produced a non-finite loss.
    #[error("divergence in {context} at step {step}: loss is not finite")]
    Divergence { context: String, step: usize },

    /// No model registered for a volume's protocol.
    #[error("routing error: {0}")]
    Routing(String),

    /// A pipeline stage was asked to run before its producer.
    #[error("missing artifact for stage `{stage}`: {path} (run stage `{producer}` first)")]
    MissingArtifact {
        stage: String,
        producer: String,
        path: String,
    },

    /// Experiment config failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical check (e.g. gradient check) exceeded its tolerance.
    #[error("check failure: {0}")]
    CheckFailure(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
