use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("outside supported domain: {0}")]
    Domain(String),

    #[error("solver did not converge: residual {residual:.3e} after {iterations} iterations at z = {tau} + {eta}i")]
    NonConvergence {
        tau: f64,
        eta: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("grid too coarse: {0}")]
    Resolution(String),

    #[error("linear algebra backend: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
