//! Dense reverse-mode automatic differentiation over `f64` tensors.
//!
//! Every learned computation in the crate is written against [`Graph`]. The
//! finite-difference checker in [`check`] is the reference used to validate
//! those gradients.

mod check;
mod graph;
mod params;
mod tensor;

pub use check::{finite_diff_check, finite_diff_report, FiniteDiffReport};
pub use graph::{Gradients, Graph, NodeId, OpKind};
pub use params::ParamSet;
pub use tensor::Tensor;
