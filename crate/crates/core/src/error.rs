use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A cell carries a value outside the domain of the operation.
    #[error("domain error at cell {index}: {message}")]
    Domain { index: usize, message: String },

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    Stability { dt: f64, limit: f64 },

    #[error("non-finite value produced at step {step}")]
    Divergence { step: usize },

    #[error("grid too small: support reached cell {index} within the outer {layers} layers at t = {t}")]
    GridTooSmall { index: usize, layers: usize, t: f64 },

    #[error("{solver} did not converge after {iterations} iterations (last residual {last:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("modeling error: {0}")]
    Modeling(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
