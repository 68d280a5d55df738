//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of nodes. Gradients are requested with
//! [`Graph::grad`]; passing `differentiable = true` records the backward pass
//! on the same tape so that its results can be differentiated once more.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cases;
mod check;
mod error;
mod graph;
mod tensor;

pub use check::{finite_difference_check, GradCheckReport};
pub use error::{AutodiffError, Result};
pub use graph::{GradientMap, Graph, Var};
pub use tensor::{conv_out_len, smooth_l1_scalar, Tensor};
