use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_sampled, GradCheckReport};
use crate::data::{Dataset, Target};
use crate::error::Result;
use crate::heads::task_loss;
use crate::hypercolumn::{build_batch, SamplingStrategy};
use crate::layers::Mode;
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor;

/// Finite-difference step used by the pipeline check.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineCheck {
    pub report: GradCheckReport,
    /// Name of the parameter holding the worst scalar.
    pub worst_param: String,
}

/// Checks backbone → sampled hypercolumns → predictor → task loss in
/// 64-bit, train mode, on an `m`×`n` batch of `data`. Dropout masks are
/// redrawn from the same seed on every evaluation so the loss is a fixed
/// function of the parameters.
pub fn pipeline_grad_check(spec: &ModelSpec, data: &Dataset, m: usize, n: usize, per_param: usize, seed: u64) -> Result<PipelineCheck> {
    let model = RefCell::new(Model::<f64>::new(spec.clone(), seed)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = build_batch(data, m, n, SamplingStrategy::Uniform, &mut rng)?;
    let images: Tensor<f64> = data.stack(&batch.images)?.cast();
    let pixels = batch.pixels();
    let targets: Vec<Target> = batch.entries.iter().map(|e| e.target).collect();
    let (names, params): (Vec<String>, Vec<Tensor<f64>>) = model
        .borrow()
        .params
        .params()
        .iter()
        .filter(|p| p.kind.trainable())
        .map(|p| (p.name.clone(), p.value.clone()))
        .unzip();
    let report = grad_check_sampled(
        |g, vars| {
            let mut model = model.borrow_mut();
            let bound = model.params.bind_vars(vars)?;
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let out = model.forward_pixels(g, &bound, images.clone(), &pixels, Mode::Train, &mut drop_rng)?;
            task_loss(g, spec.task, out, &targets)
        },
        &params,
        GRAD_CHECK_EPS,
        per_param,
        seed,
    )?;
    Ok(PipelineCheck { worst_param: names[report.worst_param].clone(), report })
}
