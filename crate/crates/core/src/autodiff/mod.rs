//! Reverse-mode automatic differentiation over dense tensors.

pub mod conv;
mod gradcheck;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, relative_error, GradCheckOptions, GradCheckReport, Probe};
pub use scalar::Scalar;
pub use tape::{OpKind, Tape, Var, BCE_EPS, LOG_FLOOR};
pub use tensor::Tensor;

pub(crate) use tape::softmax as softmax_slice;
