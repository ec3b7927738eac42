//! Dense `f64` tensors with tape-based reverse-mode differentiation.

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod optim;
mod tensor;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use gradcheck::{grad_check, grad_check_many};
pub use graph::{is_masked, Graph, Var, LAYER_NORM_EPS, MASK_VALUE};
pub use optim::{clip_grad_norm, Adam};
pub use tensor::Tensor;
