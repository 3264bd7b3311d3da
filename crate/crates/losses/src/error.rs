use tensorgrad::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("{name} must be a finite non-negative weight, got {value}")]
    Weight { name: &'static str, value: f64 },
    #[error("similarity threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
    #[error("no anchor has a positive pair above threshold {threshold}")]
    NoPositives { threshold: f64 },
    #[error("label {label} outside 0..={max}")]
    LabelOutOfRange { label: u8, max: usize },
    #[error("center dimension {got} does not match bank dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("schedule step {step} outside 0..={total} (total must be positive)")]
    Schedule { step: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, LossError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> LossError {
    LossError::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(LossError::Temperature(tau))
    }
}
