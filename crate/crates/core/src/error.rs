//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by samplers, fields, training, and the harness.
///
/// Dimension mismatches in the low-level vector/matrix kernels are caller
/// bugs and panic instead; everything driven by runtime configuration or
/// numerical state reports through this enum.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two operands that must share a dimension do not.
    DimensionMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    /// A scalar parameter fell outside its admissible interval.
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    /// A probe or state produced a NaN or infinity.
    NonFinite { context: String },
    /// A configuration key is missing or failed to parse.
    InvalidConfig { key: String, reason: String },
    /// Training loss left the finite range.
    Divergence { iteration: usize, loss: f64 },
    /// A regression or fit had too few / degenerate inputs.
    DegenerateFit { context: String },
    /// Wrapper around I/O failures.
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                left,
                right,
            } => write!(f, "dimension mismatch in {context}: {left} vs {right}"),
            Error::OutOfRange {
                what,
                value,
                min,
                max,
            } => write!(f, "{what} = {value} outside [{min}, {max}]"),
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::InvalidConfig { key, reason } => write!(f, "config key `{key}`: {reason}"),
            Error::Divergence { iteration, loss } => {
                write!(f, "training diverged at iteration {iteration}: loss = {loss}")
            }
            Error::DegenerateFit { context } => write!(f, "degenerate fit: {context}"),
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
