//! Crate-wide error type.

use crate::matcher::MatchTrace;

/// Errors produced by the numeric core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes do not satisfy an operation's precondition.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A configuration is internally inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An iterative routine failed to converge or produced non-finite values.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// A direction vanished under projection and cannot be normalized.
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),

    /// An input is degenerate for the requested operation (e.g. zero norm).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A matching run produced a non-finite loss; carries the last finite trace.
    #[error("divergence at iteration {iter}: loss became non-finite")]
    Divergence { iter: usize, trace: Box<MatchTrace> },

    /// A binary file does not conform to its format.
    #[error("parse error at byte {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
