use std::path::Path;

use crate::config::Config;
use crate::data::{Dataset, Split};
use crate::error::Result;
use crate::infer::{evaluate, EvalReport};
use crate::tensor::{Scalar, ScalarMode};
use crate::train::{TrainLog, Trainer};

/// Iterations averaged by [`RunOutcome::tail_loss`].
pub const TAIL_WINDOW: usize = 100;

/// Result of training and evaluating one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub log: TrainLog,
    /// Headline held-out metric, larger is better.
    pub score: f64,
    /// Mean training loss over the last [`TAIL_WINDOW`] iterations.
    pub tail_loss: f64,
}

fn run_typed<T: Scalar>(config: &Config, train: &Dataset, heldout: &Dataset, checkpoints: Option<&Path>) -> Result<RunOutcome> {
    let mut trainer = Trainer::<T>::new(config.train_config()?, config.model_spec()?)?;
    trainer.run(train, Some(heldout), checkpoints)?;
    let report = evaluate(&mut trainer.model, heldout, &config.task.scales, config.bench.budget)?;
    Ok(RunOutcome {
        score: report.score(),
        tail_loss: trainer.log.tail_loss(TAIL_WINDOW).unwrap_or(f64::NAN),
        report,
        log: trainer.log,
    })
}

/// Generates both splits, trains from scratch and scores the held-out split.
pub fn run_config(config: &Config) -> Result<RunOutcome> {
    let train = config.dataset(Split::Train)?;
    let heldout = config.dataset(Split::Heldout)?;
    run_on(config, &train, &heldout, None)
}

/// [`run_config`] on given datasets, optionally checkpointing.
pub fn run_on(config: &Config, train: &Dataset, heldout: &Dataset, checkpoints: Option<&Path>) -> Result<RunOutcome> {
    match config.train.scalar {
        ScalarMode::Standard => run_typed::<f32>(config, train, heldout, checkpoints),
        ScalarMode::Verification => run_typed::<f64>(config, train, heldout, checkpoints),
    }
}
