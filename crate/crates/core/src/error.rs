use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown channel `{0}`")]
    UnknownChannel(String),

    #[error("channel `{channel}` has no score of order {order}")]
    ScoreUnavailable { channel: String, order: usize },

    #[error("non-finite score {value} at y = {y}")]
    NonFiniteScore { y: f64, value: f64 },

    #[error("non-finite score at entry ({row}, {col}) (y = {y})")]
    NonFiniteEntry { row: usize, col: usize, y: f64 },

    #[error("no finite Fisher information up to k_max = {k_max}")]
    NoFisherInformation { k_max: usize },

    #[error("eigensolver did not converge after {iterations} matrix products (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("reference signal has zero norm")]
    ZeroNormReference,

    #[error("vector has zero norm")]
    ZeroNorm,

    #[error("non-finite AMP field at iteration {iteration}")]
    NonFiniteField { iteration: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("malformed instance file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
