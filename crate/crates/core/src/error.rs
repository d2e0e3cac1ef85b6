use thiserror::Error;

use crate::mdp::{Action, State};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid system configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("action {action} is not feasible in state {state}")]
    InfeasibleAction { state: State, action: Action },

    #[error("action {action} has zero probability in state {state}")]
    ZeroProbabilityAction { state: State, action: Action },

    #[error("state index {index} out of range (state count {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("relative value iteration did not converge within {iterations} sweeps (last span {span:e})")]
    NotConverged { iterations: usize, span: f64 },

    #[error("linear system is singular or ill-conditioned: {0}")]
    SingularSystem(String),

    #[error("design matrix is rank deficient (rank {rank} < {columns})")]
    RankDeficient { rank: usize, columns: usize },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
