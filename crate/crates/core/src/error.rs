use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at part {part}, row {row}, col {col}")]
    NonFiniteCell { part: usize, row: usize, col: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("activation map is not normalized")]
    NotNormalized,

    #[error("degenerate covariance for part {part} (determinant {det:e})")]
    DegenerateCovariance { part: usize, det: f64 },

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("pose state has no landmarks")]
    EmptyState,

    #[error("singular covariance for landmark {landmark} (determinant {det:e})")]
    SingularCovariance { landmark: usize, det: f64 },

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("rank-deficient design matrix: pivot {pivot} relative size {relative:e}")]
    RankDeficient { pivot: usize, relative: f64 },

    #[error("model produced a non-finite output at rollout step {step}")]
    NonFiniteOutput { step: usize },

    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },

    #[error("training diverged at step {step}: loss {loss:e}")]
    Diverged { step: usize, loss: f64 },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
