//! File formats and the command-line driver around `csipose-core`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod dataset_file;
pub mod error;
pub mod export;
pub mod recording;
pub mod report;
pub mod trainlog;

pub use error::{Error, Result};
