//! Minimal reverse-mode automatic differentiation over dense tensors.

mod graph;
pub mod gradcheck;
pub mod kernels;
mod tensor;

pub use graph::{Graph, Var, NORM_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
