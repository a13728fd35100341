//! Dense tensors, a reverse-mode tape, and the Adam optimizer.
//!
//! Training math runs in 64-bit reals; only stored index embeddings are
//! narrowed to 32 bits.

mod adam;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{softmax_nll, Gradients, NodeId, Tape};
pub use tensor::{dot, Tensor};

pub(crate) use tensor::vecmat;

/// A set of trainable tensors in a fixed order.
pub trait ParamSet {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;
}
