use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("organs do not fit: {0}")]
    DoesNotFit(String),
    #[error("position code needs at least 2 slices, got depth {0}")]
    TooFewSlices(usize),
    #[error("volume and label shapes differ: {0}")]
    ShapeMismatch(String),
    #[error("position {0} outside [0, 1]")]
    PositionOutOfRange(f64),
    #[error("similarity matrix needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("invalid split request: {0}")]
    InvalidSplit(String),
    #[error("raster: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("raster: unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("raster: unsupported precision code {0}")]
    UnsupportedPrecision(u8),
    #[error("raster: stored precision {stored} does not match requested {requested}")]
    PrecisionMismatch {
        stored: &'static str,
        requested: &'static str,
    },
    #[error("raster: rank {0} exceeds 4")]
    RankTooLarge(usize),
    #[error("raster: truncated, needed {needed} bytes but only {available} remain while reading {what}")]
    Truncated {
        what: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("raster: dimensions {0:?} overflow the addressable payload size")]
    DimOverflow(Vec<u64>),
    #[error("raster: {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("raster: reserved byte is {0}, expected 0")]
    Reserved(u8),
    #[error("raster: name is not valid UTF-8")]
    BadName,
    #[error("raster: name of {0} bytes exceeds the u16 length field")]
    NameTooLong(usize),
    #[error("manifest line {line}: {detail}")]
    Manifest { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] tensorgrad::TensorError),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DataError>;
