use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("insufficient data: need at least {needed}, got {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("solver failed: {0}")]
    Solver(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of a numerical routine (fit, solve) rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::FitFailed(_) | Error::Solver(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
