use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor extent did not match what an operation requires.
    #[error("{op}: shape mismatch on {axis}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        got: usize,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no vector-Jacobian product defined for `{0}`")]
    NoVjp(&'static str),

    /// Depth at or below the dropout threshold; `index` is the flat pixel index.
    #[error("depth dropout at pixel {index}: {value} m <= minimum {min_depth_m} m")]
    DepthDropout { index: usize, value: f32, min_depth_m: f32 },

    #[error("subject region {x},{y} {w}x{h} out of bounds for {width}x{height} frame")]
    RegionOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    /// Every violated invariant, collected before failing.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("metadata: {0}")]
    Metadata(String),

    #[error("GFT {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("training: {0}")]
    Training(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected,
            got,
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument { op, msg: msg.into() }
    }
}
