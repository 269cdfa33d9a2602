use thiserror::Error;

/// Errors produced while building games, configuring solvers or running experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid game: {0}")]
    InvalidGame(String),

    #[error("multiplier graph is not connected")]
    DisconnectedGraph,

    #[error("multiplier graph weights are not symmetric with zero diagonal")]
    AsymmetricGraph,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{0} requires affine coupling constraints (preconditioning cannot be used for nonlinear coupling)")]
    NonlinearCoupling(&'static str),

    #[error("local term of player {0} is not an indicator function, no projector available")]
    NotAnIndicator(usize),

    #[error("no exact pseudogradient available and no sampled fallback requested")]
    MissingExactOracle,

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("iterate diverged at iteration {iteration}")]
    Diverged { iteration: usize },

    #[error("solver {0} is not applicable: {1}")]
    Unsupported(String, String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
