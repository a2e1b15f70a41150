use crate::error::{Error, Result};
use crate::hypercolumn::SamplingStrategy;
use crate::model::PipelineMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(iteration, multiplier)` milestones, strictly increasing.
    pub schedule: Vec<(usize, f64)>,
    pub images_per_batch: usize,
    pub pixels_per_image: usize,
    pub strategy: SamplingStrategy,
    pub iterations: usize,
    pub seed: u64,
    /// Held-out evaluation cadence; 0 disables it.
    pub eval_every: usize,
    /// Checkpoint cadence; 0 disables it.
    pub checkpoint_every: usize,
    /// Draw each batch at half resolution with probability one half.
    pub half_resize: bool,
    pub pipeline: PipelineMode,
    /// Reject non-finite values after every graph op.
    pub checked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-2,
            momentum: 0.9,
            weight_decay: 5e-4,
            schedule: TrainConfig::auto_schedule(2000),
            images_per_batch: 5,
            pixels_per_image: 256,
            strategy: SamplingStrategy::Uniform,
            iterations: 2000,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            half_resize: false,
            pipeline: PipelineMode::Sampled,
            checked: false,
        }
    }
}

impl TrainConfig {
    /// Two ×0.1 drops at one and two thirds of `iterations`.
    pub fn auto_schedule(iterations: usize) -> Vec<(usize, f64)> {
        let (a, b) = (iterations / 3, 2 * iterations / 3);
        if a == 0 || a == b {
            return Vec::new();
        }
        vec![(a, 0.1), (b, 0.1)]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::config("schedule iterations must be strictly increasing"));
            }
        }
        if let Some((it, m)) = self.schedule.iter().find(|(_, m)| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::config(format!("schedule multiplier {m} at iteration {it} must be positive")));
        }
        if self.images_per_batch == 0 || self.pixels_per_image == 0 {
            return Err(Error::config("images and pixels per batch must be positive"));
        }
        if let SamplingStrategy::Biased { rho } = self.strategy {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::config(format!("rho must lie in [0, 1], got {rho}")));
            }
        }
        Ok(())
    }
}

/// `lr0` times every schedule multiplier whose milestone is at or before
/// `iteration`.
pub fn lr_at(config: &TrainConfig, iteration: usize) -> f64 {
    config.schedule.iter().filter(|(it, _)| *it <= iteration).fold(config.lr0, |lr, (_, m)| lr * m)
}
