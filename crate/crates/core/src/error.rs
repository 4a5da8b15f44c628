use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("estimator unavailable: {0}")]
    Estimator(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("unsupported version tag {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },

    #[error("bad magic number {found} (expected {expected})")]
    BadMagic { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown domain id {0}")]
    UnknownDomain(usize),

    #[error("dataset error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Index(_) => "index",
            Error::Contract(_) => "contract",
            Error::NonFinite(_) => "non_finite",
            Error::Estimator(_) => "estimator",
            Error::Malformed(_) => "malformed",
            Error::Version { .. } => "version",
            Error::BadMagic { .. } => "bad_magic",
            Error::Config(_) => "config",
            Error::UnknownDomain(_) => "unknown_domain",
            Error::Data(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
