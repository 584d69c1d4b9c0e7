#![no_std]

extern crate alloc;

pub mod analysis;
pub mod dsp;
pub mod fusion;
mod error;
pub mod math;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use math::Matrix;
pub use rng::Rng;
