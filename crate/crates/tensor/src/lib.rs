//! Minimal reverse-mode automatic differentiation for convolutional image
//! networks: `f32` NCHW tensors, im2col/SGEMM convolutions, a recording tape
//! and Adam.

mod adam;
mod exec;
mod graph;
mod kernels;
pub mod ops;
mod params;
mod tensor;

pub use adam::Adam;
pub use exec::{Eager, Exec};
pub use graph::{Gradients, Graph, Var};
pub use params::{Conv, ConvShape, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;
