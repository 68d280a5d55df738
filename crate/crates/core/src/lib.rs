// NaN-rejecting checks are written as `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod env;
pub mod error;
pub mod models;
pub mod nn;
pub mod planning;
pub mod rng;
pub mod training;

pub use error::{PadError, Result};
