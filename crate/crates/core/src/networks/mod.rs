//! Model architectures: the complex three-moons predictor, the Memory
//! Mosaic language model, a matched decoder transformer, and the parameter
//! container and checkpoint format they share.

pub mod checkpoint;
mod lm;
mod moons;
mod params;

pub use lm::{
    build_baseline_transformer, build_lm, build_mosaic_lm, Family, LmConfig, SequenceModel, SlotSizing, Trace,
};
pub use moons::{
    build_moons_model, build_moons_model_scaled, complex_rows, moons_forward, rows_to_complex, ComplexMatrix3,
    MoonsModel, MoonsStream, StreamMark, MOONS_BETA,
};
pub use params::{count_parameters, Parameter, Parameters, Trainable};
