//! Scalar-graph reverse-mode differentiation: dense [`Tensor`] values,
//! a recording [`Tape`], and finite-difference checking helpers.

pub mod check;
pub mod tape;
pub mod tensor;

pub use tape::{softmax_slice, Gradients, NodeId, Tape};
pub use tensor::Tensor;
