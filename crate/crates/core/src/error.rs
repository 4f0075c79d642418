use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state ({x}, {y}): {reason}")]
    InvalidState { x: f64, y: f64, reason: String },

    #[error("unknown map id `{0}` (expected map1, map2 or map3)")]
    UnknownMap(String),

    #[error("invalid map layout: {0}")]
    InvalidLayout(String),

    #[error("spawn sampling rejected {0} consecutive candidates; spawn region leaves no free space")]
    SpawnRejection(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite loss at training step {step}")]
    NanLoss { step: usize },

    #[error("non-finite gradient passed to optimizer")]
    NanGradient,

    #[error("fixed-point iteration did not converge within {max_sweeps} sweeps (residual {residual:.3e})")]
    NonConvergence { max_sweeps: usize, residual: f64 },

    #[error("grids are not aligned: {0}")]
    GridMismatch(String),

    #[error("region contains no free cells")]
    EmptyRegion,

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("parse error in {what}: {detail}")]
    Parse { what: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
