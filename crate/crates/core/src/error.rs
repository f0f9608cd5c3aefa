use thiserror::Error;

/// Errors produced by the IRL toolkit.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("trajectory {index} is infeasible: {reason}")]
    InfeasibleTrajectory { index: usize, reason: String },

    #[error("trajectory of length {len} exceeds padding length {max}")]
    TrajectoryTooLong { len: usize, max: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid features: {0}")]
    InvalidFeatures(String),

    #[error("operation requires state-only rewards")]
    NotStateOnly,

    #[error("path enumeration would exceed {limit} paths")]
    EnumerationLimit { limit: usize },

    #[error("non-finite log-likelihood")]
    NonFinite,

    #[error("all importance weights are zero")]
    ZeroWeights,

    #[error("no feasible path satisfies the constraints")]
    NoFeasiblePath,

    #[error("value iteration did not converge after {sweeps} sweeps")]
    Divergence { sweeps: usize },

    #[error("singular policy evaluation system (improper policy under undiscounted dynamics)")]
    SingularPolicy,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
