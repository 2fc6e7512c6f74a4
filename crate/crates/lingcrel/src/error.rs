//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} out of range for a graph on {d} nodes")]
    NodeOutOfRange { node: usize, d: usize },

    #[error("invalid edge ({from}, {to}): {reason}")]
    InvalidEdge {
        from: usize,
        to: usize,
        reason: String,
    },

    #[error("graph contains a directed cycle")]
    CycleDetected,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model violates an invariant: {0}")]
    InvalidModel(String),

    #[error("ICA did not converge in {max_iter} iterations (best residuals per component: {residuals:?})")]
    IcaNonConvergence {
        max_iter: usize,
        residuals: Vec<f64>,
    },

    #[error("data is rank deficient: {0}")]
    RankDeficient(String),

    #[error("psi collision in environment {env}: aligned rows {row_a} and {row_b} have gap {gap:.3e} < {threshold:.3e}")]
    PsiCollision {
        env: usize,
        row_a: usize,
        row_b: usize,
        gap: f64,
        threshold: f64,
    },

    #[error("psi sequences disagree across environments {env_a} and {env_b} at position {position}: gap {gap:.3e} >= {threshold:.3e}")]
    PsiMisaligned {
        env_a: usize,
        env_b: usize,
        position: usize,
        gap: f64,
        threshold: f64,
    },

    #[error("population-mode assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("subspace intersection at node {node} has dimension larger than predicted (eigenvalue gap {gap:.3e})")]
    NonUniqueIntersection { node: usize, gap: f64 },

    #[error("retry cap of {cap} exceeded while {action}")]
    RetryCapExceeded { cap: usize, action: String },

    #[error("trial {trial} exceeded its wall-clock budget of {budget_secs} s")]
    BudgetExceeded { trial: usize, budget_secs: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
