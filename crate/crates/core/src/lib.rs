// `!(x > 0.0)` is used on purpose so that NaN is rejected with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod error;
pub mod forward;
pub mod geometry;
pub mod harness;
pub mod prior;
pub mod sampler;

pub use error::{Error, Result};
