//! Dense tensors, tape-based reverse-mode differentiation, and a finite-difference
//! gradient checker.

mod error;
mod gradcheck;
mod kernels;
mod scalar;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_coverage, grad_check_sampled, Coverage, relative_error, GradCheckReport, FD_EPS, FD_STEP};
pub use scalar::{Precision, Real};
pub use tape::{Tape, Var, NORM_EPS};
pub use tensor::{numel, strides, Tensor};
