use std::io;

use thiserror::Error;

pub type Result<T, E = SgpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SgpError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("reservoir init failed: {0}")]
    Init(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl SgpError {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            SgpError::InvalidGraph(_) => "invalid_graph",
            SgpError::Shape(_) => "shape",
            SgpError::InvalidInput(_) => "invalid_input",
            SgpError::Config(_) => "config",
            SgpError::Init(_) => "init",
            SgpError::Index(_) => "index",
            SgpError::Usage(_) => "usage",
            SgpError::Format(_) => "format",
            SgpError::Fingerprint(_) => "fingerprint",
            SgpError::MissingArtifact(_) => "missing_artifact",
            SgpError::NonFinite(_) => "non_finite",
            SgpError::Io(_) => "io",
        }
    }
}

impl From<csv::Error> for SgpError {
    fn from(err: csv::Error) -> Self {
        SgpError::InvalidInput(format!("csv: {err}"))
    }
}
