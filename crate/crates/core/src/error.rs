use thiserror::Error;

use crate::fitting::FitResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// The initial distribution puts too much probability on the truncation
    /// boundary of the carrier-count state space.
    #[error(
        "markov truncation overflow: boundary mass {mass:.3e} exceeds {threshold:.1e} at m_max={m_max}; \
         use m_max >= {required}"
    )]
    TruncationOverflow {
        mass: f64,
        threshold: f64,
        m_max: usize,
        required: usize,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("empty stream: {0}")]
    EmptyStream(String),

    #[error("surface has no valid bins")]
    NoValidBins,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("detector kernel ({kernel_ns:.3} ns support) is wider than the grid extent ({extent_ns:.3} ns)")]
    KernelTooWide { kernel_ns: f64, extent_ns: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit did not converge after {} iterations (best residual {:.6e})", .best.iterations, .best.residual)]
    NotConverged { best: Box<FitResult> },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_byte(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("byte {offset}"),
            message: message.into(),
        }
    }
}
