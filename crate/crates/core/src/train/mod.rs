//! Momentum SGD, the step schedule, the training loop and checkpoints.

mod checkpoint;
mod config;
mod log;
mod optim;
mod trainer;

pub use checkpoint::Checkpoint;
pub use config::{lr_at, TrainConfig};
pub use log::{LogRow, TrainLog};
pub use optim::{sgd_step, OptimState};
pub use trainer::{half_resolution, train, Trainer};
