//! Losses, the AdamW optimizer, the learning-rate schedule and the
//! training loop shared by every model family.

mod losses;
mod optim;
mod schedule;
mod train;

pub use losses::{clipped_complex_mse, cross_entropy, moons_sequence_loss, MOONS_CLIP};
pub use optim::{adamw_step, AdamConfig, OptimizerState};
pub use schedule::{lr_at, ScheduleSpec};
pub use train::{check_model_gradient, train, TrainConfig, TrainReport};
