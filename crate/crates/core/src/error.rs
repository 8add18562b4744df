use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument was outside its documented range.
    #[error("invalid argument: {0}")]
    Domain(String),

    /// A stream ended before the tester had drawn its full sample.
    #[error("stream ended after {got} elements, {needed} were required")]
    StreamExhausted { needed: u64, got: u64 },

    /// A protocol or state machine broke one of its structural contracts.
    #[error("contract violation: {0}")]
    Contract(String),

    /// An audit request that is not allowed (for example auditing a
    /// noiseless debug tester, which carries no privacy at all).
    #[error("audit rejected: {0}")]
    AuditRejected(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
