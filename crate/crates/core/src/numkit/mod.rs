//! Dense matrices, recorded reverse-mode differentiation, Adam and
//! finite-difference gradient checking.

mod autodiff;
mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tensor;

pub use autodiff::{Graph, Var};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_FORMAT};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, Objective, ParamCheck};
pub use optim::{adam_step, AdamState};
pub use params::{ParamId, ParamTape};
pub use tensor::{dot, euclidean, l2_norm, leaky_relu, normalized, softmax_rows, Mask, Tensor2};
