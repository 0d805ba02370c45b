use thiserror::Error;

#[derive(Debug, Error)]
pub enum PboError {
    #[error("unknown benchmark function `{0}`")]
    UnknownFunction(String),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("grid of {per_dim} points per dimension in {dim} dimensions is too large")]
    GridOverflow { per_dim: usize, dim: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid label {0}, expected 0 or 1")]
    InvalidLabel(u8),
    #[error("Newton iteration did not converge after {iterations} iterations (gradient max-norm {grad_norm:e})")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("{0} matrix is not positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("least-squares system for the sampled path is rank deficient")]
    RankDeficient,
    #[error("arm index {index} out of range for {arms} arms")]
    ArmOutOfRange { index: usize, arms: usize },
    #[error("no rounds played yet")]
    EmptyState,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PboError>;
