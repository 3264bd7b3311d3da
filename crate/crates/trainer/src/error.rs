use std::path::PathBuf;

use losses::LossError;
use nets::NetError;
use phantom::DataError;
use tensorgrad::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config line {line}: {detail}")]
    ConfigSyntax { line: usize, detail: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: cannot parse {value:?}: {detail}")]
    BadValue { key: String, value: String, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{what} is not finite at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("metrics file line {line}: {detail}")]
    Metrics { line: usize, detail: String },
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Net(#[from] NetError),
    #[error("{0}")]
    Loss(#[from] LossError),
    #[error("{0}")]
    Tensor(#[from] TensorError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

impl TrainError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage/config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::ConfigSyntax { .. }
            | TrainError::UnknownKey(_)
            | TrainError::BadValue { .. }
            | TrainError::Invalid(_) => 1,
            TrainError::NonFinite { .. } => 3,
            TrainError::Tensor(TensorError::NonFinite { .. }) => 3,
            TrainError::Loss(LossError::Tensor(TensorError::NonFinite { .. })) => 3,
            TrainError::Net(NetError::Tensor(TensorError::NonFinite { .. })) => 3,
            _ => 2,
        }
    }
}
