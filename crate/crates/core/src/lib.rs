//! Selective inference for a difference in feature means between two
//! clusters estimated from the same data.

// `!(a < b)` is written on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod clustering;
pub mod error;
pub mod inference;
pub mod interval;
pub mod io;
pub mod model;
pub mod normal;
pub mod oracle;
pub mod preprocess;
pub mod rng;
pub mod sim;
pub mod truncation;

pub use error::{Error, Result};
