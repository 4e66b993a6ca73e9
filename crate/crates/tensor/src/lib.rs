//! Dense real tensors with tape-based reverse-mode differentiation.
//!
//! Values live on a [`Tape`]; every operation appends a node and returns a
//! [`Var`] handle. Calling [`Tape::backward`] on a scalar leaves gradients on
//! every leaf that requires them. [`grad_check`] compares those gradients with
//! central finite differences.

mod element;
mod error;
pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::norm::BatchNormMode;
pub use tape::{Tape, Var};
pub use tensor::Tensor;
