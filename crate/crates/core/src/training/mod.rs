//! L1 training: Adam, step schedule, patch sampling and the loop itself.

mod adam;
mod config;
mod sampler;
mod trainer;

pub use adam::Adam;
pub use config::{lr_at, TrainConfig};
pub use sampler::{iteration_rng, sample_batch, Batch};
pub use trainer::{format_log_line, Trainer};
