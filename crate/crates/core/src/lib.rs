//! Memory Mosaics: networks of associative memory units built on Gaussian
//! kernel smoothing, a matched decoder-transformer baseline, the synthetic
//! tasks used to study them, and their training and evaluation protocols.

pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod memory_units;
pub mod networks;
pub mod numerics;
pub mod record;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
