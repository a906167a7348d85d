//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid task graph: {0}")]
    InvalidGraph(String),
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("shape mismatch in {layer}: expected {expected}, got {got}")]
    ShapeMismatch {
        layer: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown reward value {0} (expected one of 0, 10, 20, 40)")]
    UnknownReward(f64),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("frozen-state contract violation: {0}")]
    FrozenViolation(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at row {row}: {message}")]
    Schema { row: usize, message: String },
    #[error("no records in dataset")]
    Empty,
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<usize>),
    #[error("not enough data: {0}")]
    NotEnoughData(String),
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("trial count mismatch: dataset has {data} trials, schedule has {schedule}")]
    TrialCountMismatch { data: usize, schedule: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}
