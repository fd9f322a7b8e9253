use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimensions: n = {n}, m = {m} (need n >= 2 and 0 <= m <= n - 1)")]
    InvalidDimensions { n: usize, m: usize },

    #[error("exponent p = {p} outside the admissible range ({lower}, inf]")]
    ExponentOutOfRange { p: f64, lower: f64 },

    #[error("axis singularity: {0}")]
    AxisSingularity(&'static str),

    #[error("degenerate gradient: |grad u| = {0:e} is below the gradient floor")]
    DegenerateGradient(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("under-resolved grid: {0}")]
    UnderResolved(String),

    #[error("pole: {0}")]
    Pole(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn precondition<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Precondition(msg.into()))
}
