//! File formats, dataset generation and the `avfuse` command line on top of
//! [`avfuse_core`].

pub mod cli;
pub mod dataset;
mod error;
pub mod io;

pub use error::{Error, Result};
