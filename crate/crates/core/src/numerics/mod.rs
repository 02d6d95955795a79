//! Dense tensors, a differentiable op tape, and a finite-difference checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, Scheme, relative_error, GradCheckReport, TensorCheck};
pub use graph::{kernels, Gradients, Graph, NodeId, NORM_FLOOR, PROB_FLOOR};
pub use tensor::Tensor;
