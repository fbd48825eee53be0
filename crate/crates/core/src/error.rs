use thiserror::Error;

/// Errors raised by the exceedance pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("station {station}: missing cap exceeded ({fraction:.4} > {cap:.4})")]
    MissingCapExceeded {
        station: String,
        fraction: f64,
        cap: f64,
    },

    #[error("duplicate record for station {station} on {date}")]
    DuplicateRecord { station: String, date: String },

    #[error("inconsistent dates across stations: {0}")]
    InconsistentDates(String),

    #[error("duplicate site at ({x}, {y})")]
    DuplicateSite { x: f64, y: f64 },

    #[error("all kernel weights are zero at t = {t} (bandwidth {bandwidth})")]
    ZeroKernelWeights { t: f64, bandwidth: f64 },

    #[error("all values are equal; covariance parameters are not identifiable")]
    ZeroVariance,

    #[error(
        "covariance matrix is not positive definite after jitter; offending sites {i} and {j}"
    )]
    NotPositiveDefinite { i: usize, j: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("overflow: {0}")]
    Overflow(String),

    #[error("transform has no inverse")]
    NonInvertibleTransform,

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroKernelWeights { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::Numerical(_)
                | Error::Overflow(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
