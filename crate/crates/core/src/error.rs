use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Volterra marching needs `h * rate < 1` for the trapezoidal correction to contract.
    #[error("grid too coarse: step {step} times rate {rate} = {product} must be < 1")]
    GridTooCoarse { step: f64, rate: f64, product: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("decay rate delta = {delta} must lie in (0, {upper})")]
    InvalidDelta { delta: f64, upper: f64 },

    #[error("no feasible (eps, nu) pair: {0}")]
    Infeasible(String),

    #[error("nominal loop is not contracting: {0}")]
    NotContracting(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("trace error: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }
}
