use std::time::Instant;

use super::memory::{account_memory, MemoryConfig};
use crate::config::Config;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::model::PipelineMode;
use crate::train::Trainer;

/// Smallest untimed warmup and timed window accepted.
pub const MIN_WARMUP: usize = 5;
pub const MIN_TIMED: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ThroughputReport {
    pub mode: PipelineMode,
    pub updates_per_second: f64,
    pub warmup: usize,
    pub timed: usize,
    pub host: String,
    /// Rendered configuration the window ran under.
    pub config: String,
}

pub fn host_descriptor() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} threads={threads}", std::env::consts::OS, std::env::consts::ARCH)
}

/// Mean training updates per second of `mode` over `iterations` timed
/// steps after `config.bench.warmup` untimed ones, in 32-bit scalars.
pub fn measure_throughput(mode: PipelineMode, config: &Config, iterations: usize) -> Result<ThroughputReport> {
    if iterations == 0 {
        return Err(Error::contract("throughput window of zero iterations"));
    }
    if iterations < MIN_TIMED || config.bench.warmup < MIN_WARMUP {
        return Err(Error::contract(format!(
            "throughput needs at least {MIN_WARMUP} warmup and {MIN_TIMED} timed iterations, got {} and {iterations}",
            config.bench.warmup
        )));
    }
    let mut config = config.clone();
    config.sample.pipeline = mode;
    config.train.iterations = config.bench.warmup + iterations;
    let mem = account_memory(mode, &MemoryConfig::from_config(&config)?, config.train.scalar)?;
    if mem.peak_scalars > config.bench.budget {
        return Err(Error::Resource {
            what: format!("{} pipeline", mode.name()),
            required: mem.peak_scalars,
            budget: config.bench.budget,
        });
    }
    let train = config.dataset(Split::Train)?;
    let mut trainer = Trainer::<f32>::new(config.train_config()?, config.model_spec()?)?;
    for _ in 0..config.bench.warmup {
        trainer.step(&train)?;
    }
    let start = Instant::now();
    for _ in 0..iterations {
        trainer.step(&train)?;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(ThroughputReport {
        mode,
        updates_per_second: iterations as f64 / secs,
        warmup: config.bench.warmup,
        timed: iterations,
        host: host_descriptor(),
        config: config.render(),
    })
}
