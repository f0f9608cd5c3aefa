//! Maximum-entropy inverse reinforcement learning with exact
//! forward-backward inference over finite-horizon trajectory sets.

pub mod baselines;
pub mod envs;
pub mod error;
pub mod exact;
pub mod experiments;
pub mod io;
pub mod learning;
pub mod logspace;
pub mod mdp;
pub mod optim;
pub mod path_inference;
pub mod policy;
pub mod reward;

pub use error::{Error, Result};
pub use exact::{ExactModel, MarginalSet, Variant};
pub use learning::{LearnResult, OptimizerConfig};
pub use mdp::{Dataset, Mdp, Trajectory};
pub use reward::{FeatureSet, FeatureVectors, RewardParams, RewardTables};
