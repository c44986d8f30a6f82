use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The index has (numerically) zero variance, so no regression on it exists.
    #[error("degenerate index: {0}")]
    DegenerateIndex(String),

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("covariance is not positive semidefinite: {0}")]
    NotPsd(String),

    /// A ratio metric left [0, 1] by more than the rounding allowance.
    #[error("metric out of range: {name} = {value}")]
    OutOfRange { name: &'static str, value: f64 },

    #[error("quadrature did not converge: estimated error {error:e} after {intervals} intervals")]
    Quadrature { error: f64, intervals: usize },

    #[error("{failed} of {total} replications failed at T = {t} (limit 1%): {first}")]
    ReplicationFailures {
        t: usize,
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl Error {
    /// Errors caused by the input data rather than by a numerical procedure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Csv(_) | Error::InvalidPanel(_) | Error::InvalidArgument(_)
        )
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
