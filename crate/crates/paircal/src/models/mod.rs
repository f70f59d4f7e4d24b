//! Pair predictors: exact tabular models built from oracles or counts,
//! and gradient-trained parametric models.

pub mod baselines;
pub mod mlp;
pub mod tabular;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("weights and components disagree: {0}")]
    MismatchedGroup(String),
    #[error("target pair ({y1}, {y2}) has probability below 1e-300")]
    ZeroProbabilityTarget { y1: usize, y2: usize },
    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: usize },
    #[error("non-finite activation in the forward pass")]
    NonFiniteActivation,
    #[error("ensembles need at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("head {head:?} does not produce pair joints")]
    NotAPairHead { head: &'static str },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label index {index} out of range for K = {k}")]
    LabelOutOfRange { index: usize, k: usize },
    #[error(transparent)]
    Dist(#[from] crate::dist::DistError),
}
