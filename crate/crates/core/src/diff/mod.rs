//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{
    finite_diff_check, relative_error, CoordinateError, GradCheckConfig, GradCheckReport,
    Parameters,
};
pub use tape::{GradientMap, Gradients, Tape, Var, VarMap};
pub use tensor::Tensor;
