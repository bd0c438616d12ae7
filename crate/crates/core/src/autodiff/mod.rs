//! Dense tensors with a define-by-run reverse-mode gradient tape, plus the
//! Adam optimizer, parameter storage, checkpoints and a finite-difference
//! gradient checker.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
pub mod init;
mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{adam_step, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport, GradFailure, FD_STEP};
pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use params::{Bound, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
