use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A similarity or hash operation received a vector with no mass.
    #[error("zero-norm vector ({0})")]
    ZeroNorm(&'static str),
    /// Vectorization produced no in-vocabulary terms.
    #[error("empty vector: {0}")]
    EmptyVector(String),
    /// A value fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke the stream protocol (tick ordering, duplicate ids, ...).
    #[error("protocol error: {0}")]
    Protocol(String),
    /// An integration or sampling interval with zero mass.
    #[error("degenerate interval: {0}")]
    DegenerateInterval(String),
    /// Bad configuration, rejected before any work starts.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Malformed input record.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    /// An internal invariant was violated; results cannot be trusted.
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
