use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("target bit error rate {0} must lie in (0, 0.2)")]
    InvalidBerTarget(f64),

    #[error("payoff matrix must have at least one row and one column")]
    EmptyMatrix,

    #[error("payoff matrix has a non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },

    #[error("linear program did not converge: {0}")]
    SolverFailure(String),

    #[error("action {action} has probability {probability}, below the floor {floor}")]
    ProbabilityFloor { action: usize, probability: f64, floor: f64 },

    #[error("full game would need {count} allocation actions (limit {limit}); use reduced mode")]
    ActionLimit { count: u128, limit: u128 },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
