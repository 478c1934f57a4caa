use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("layer {layer} is not nested inside layer {outer} (theta = {theta:.4} rad)")]
    NotNested { outer: usize, layer: usize, theta: f64 },

    #[error("shape mismatch at {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-positive pixel {value} at index {index}")]
    NonPositivePixel { index: usize, value: f64 },

    #[error("backward called before any forward operation was recorded")]
    BackwardBeforeForward,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("point {index} coincides with the center")]
    PointAtCenter { index: usize },

    #[error("underdetermined fit: {points} points for {unknowns} coefficients (need at least {required})")]
    Underdetermined {
        points: usize,
        unknowns: usize,
        required: usize,
    },

    #[error("rank-deficient fit: effective rank {rank} of {unknowns}")]
    RankDeficient { rank: usize, unknowns: usize },

    #[error("rejection rate too high: {rejected} rejected for {accepted} accepted samples")]
    RejectionRate { rejected: usize, accepted: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
