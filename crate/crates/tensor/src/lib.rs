//! Dense tensors, a reverse-mode autodiff tape and Adam.

mod error;
mod graph;
pub mod kernels;
mod optim;
pub mod rng;
mod scalar;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use optim::{clip_grad_norm, Adam};
pub use scalar::Scalar;
pub use tensor::Tensor;
