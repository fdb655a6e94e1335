#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod body;
pub mod channel;
pub mod compute;
pub mod dataset;
pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod scene;
pub mod skeleton;
pub mod train;

pub use error::{Error, Result};
