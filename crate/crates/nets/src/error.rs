use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] tensorgrad::TensorError),
    #[error("input spatial dims {height}x{width} must be divisible by 8")]
    Indivisible { height: usize, width: usize },
    #[error("input must be N×1×H×W, got {0:?}")]
    InputShape(Vec<usize>),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter sets differ: missing {missing:?}, unexpected {extra:?}")]
    NameMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("parameter {name:?}: shape {left:?} vs {right:?}")]
    ShapeMismatch {
        name: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("EMA decay {0} outside (0, 1)")]
    InvalidDecay(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, NetError>;
