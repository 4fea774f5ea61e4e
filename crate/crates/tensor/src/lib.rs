//! Dense n-dimensional arrays with define-by-run reverse-mode automatic
//! differentiation.
//!
//! Values live in [`Tensor`]; computations are recorded on a [`Graph`] which
//! is rebuilt every step. Every op is generic over [`Element`] so the same
//! code runs in `f32` for training and in `f64` for gradient checking.

pub mod checkpoint;
mod element;
mod error;
#[cfg(feature = "gradcheck")]
pub mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use graph::{BatchNormMode, BatchStats, Graph, Padding, Var};
pub use tensor::Tensor;
