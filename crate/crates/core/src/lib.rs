//! Signed passivity and dominance analysis for piecewise-linear circuits.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod circuit;
pub mod dominance;
pub mod elements;
pub mod error;
pub mod exec;
pub mod interconnect;
pub mod matkernel;
pub mod sim;

pub use error::{Error, Result};
pub use exec::Exec;
