use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid probability table: {0}")]
    InvalidProbability(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("behavior policy has zero probability at state {state}, action {action}")]
    ZeroBehavior { state: usize, action: usize },

    #[error("behavior chain is reducible: state {unreachable} is not reachable from state {from}")]
    Reducible { from: usize, unreachable: usize },

    #[error("behavior chain is periodic with period {period}")]
    Periodic { period: usize },

    #[error("behavior chain did not reach total variation {alpha} within {cap} steps")]
    NonMixing { alpha: f64, cap: usize },

    #[error("trajectory too short: need {needed} steps, got {got}")]
    TrajectoryTooShort { needed: usize, got: usize },

    #[error("window must hold {expected} state-action pairs, got {got}")]
    WindowLength { expected: usize, got: usize },

    #[error("bound evaluated below the mixing horizon: k = {k} < {horizon}")]
    BelowHorizon { k: usize, horizon: usize },

    #[error("non-finite critic estimate at outer iteration {t}")]
    NonFinite { t: usize },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
