//! Error type shared across the crate.

use std::fmt;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the structured linear-algebra routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An FFT was requested on a length that is not a power of two.
    InvalidLength { len: usize },
    /// Two objects that must agree on a dimension do not.
    DimMismatch { context: &'static str, expected: usize, got: usize },
    /// An input contained NaN or infinity.
    NonFinite { context: &'static str },
    /// An iterative routine failed to converge.
    NoConvergence { context: &'static str, iterations: usize },
    /// A Sylvester system was singular or nearly so: the operator spectra
    /// overlap and the displacement cannot be inverted uniquely.
    SpectralOverlap { condition: f64 },
    /// A matrix inverse was requested but the matrix is too ill-conditioned.
    IllConditioned { condition: f64 },
    /// A text input (CSV, config) failed to parse.
    Parse { line: usize, message: String },
    /// A config file is missing a key or holds an unusable value.
    Config { message: String },
    /// Training aborted because the loss became non-finite.
    Diverged { epoch: usize },
    /// Underlying I/O failure.
    Io { message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidLength { len } => {
                write!(f, "FFT length {len} is not a power of two")
            }
            Error::DimMismatch { context, expected, got } => {
                write!(f, "dimension mismatch in {context}: expected {expected}, got {got}")
            }
            Error::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            Error::NoConvergence { context, iterations } => {
                write!(f, "{context} did not converge after {iterations} iterations")
            }
            Error::SpectralOverlap { condition } => {
                write!(
                    f,
                    "Sylvester system is singular or near-singular (operator spectra overlap); \
                     condition estimate {condition:.3e}"
                )
            }
            Error::IllConditioned { condition } => {
                write!(f, "matrix is ill-conditioned: condition estimate {condition:.3e}")
            }
            Error::Parse { line, message } => {
                write!(f, "parse error at line {line}: {message}")
            }
            Error::Config { message } => write!(f, "config error: {message}"),
            Error::Diverged { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}")
            }
            Error::Io { message } => write!(f, "I/O error: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io { message: e.to_string() }
    }
}
