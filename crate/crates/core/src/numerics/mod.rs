//! Dense tensors, a reverse-mode tape, Adam, and finite-difference checks.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheckOptions, GradCheckReport, TensorCheck};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, LOG_CLAMP};
pub use tensor::Tensor;
