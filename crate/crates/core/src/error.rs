//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad constructor arguments or malformed configuration.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Schedule index outside `1..=T`.
    #[error("diffusion time index {t} out of range 1..={t_max}")]
    TimeOutOfRange { t: usize, t_max: usize },

    /// A numeric quantity that must be finite was not.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An operation required an oracle the target does not provide.
    #[error("missing oracle: {0}")]
    MissingOracle(&'static str),

    /// Training diverged; carries the component and iteration for diagnosis.
    #[error("numerical abort in {component} at iteration {iteration}")]
    NumericalAbort { component: String, iteration: usize },

    /// Quadrature/evaluation grid below the supported resolution.
    #[error("grid too coarse: {len} points (need at least {min})")]
    GridTooCoarse { len: usize, min: usize },

    /// Checkpoint directory missing or corrupt.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
