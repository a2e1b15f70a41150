use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{lr_at, TrainConfig};
use super::log::{LogRow, TrainLog};
use super::optim::{sgd_step, OptimState};
use crate::autodiff::Graph;
use crate::data::{Dataset, Target, TargetMap};
use crate::error::{Error, Result};
use crate::heads::task_loss;
use crate::hypercolumn::build_batch;
use crate::infer::{evaluate, resize_bilinear, DEFAULT_BUDGET};
use crate::layers::Mode;
use crate::model::{Model, ModelSpec};
use crate::rng::{stream, stream_at, Stream};
use crate::tensor::{Scalar, Tensor};

/// Owns a model, its optimizer state and the random streams of one run.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub state: OptimState<T>,
    pub log: TrainLog,
    sampling: ChaCha8Rng,
    dropout: ChaCha8Rng,
    half: Option<Dataset>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh run: parameters drawn from the init stream of `config.seed`.
    pub fn new(config: TrainConfig, spec: ModelSpec) -> Result<Self> {
        config.validate()?;
        let model = Model::new(spec, config.seed)?;
        Ok(Trainer {
            state: OptimState::new(&model.params),
            sampling: stream(config.seed, Stream::Sampling),
            dropout: stream(config.seed, Stream::Dropout),
            config,
            model,
            log: TrainLog::default(),
            half: None,
        })
    }

    /// Continues the run saved in `dir`.
    pub fn resume(config: TrainConfig, spec: ModelSpec, dir: &Path) -> Result<Self> {
        config.validate()?;
        spec.validate()?;
        let ck = Checkpoint::<T>::load(dir)?;
        if ck.seed != config.seed {
            return Err(Error::config(format!("checkpoint seed {} differs from config seed {}", ck.seed, config.seed)));
        }
        let model = Model::with_params(spec, ck.params)?;
        Ok(Trainer {
            sampling: stream_at(config.seed, Stream::Sampling, ck.sampling_pos),
            dropout: stream_at(config.seed, Stream::Dropout, ck.dropout_pos),
            config,
            model,
            state: ck.state,
            log: ck.log,
            half: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            params: self.model.params.clone(),
            state: self.state.clone(),
            seed: self.config.seed,
            sampling_pos: self.sampling.get_word_pos(),
            dropout_pos: self.dropout.get_word_pos(),
            log: self.log.clone(),
        }
    }

    /// One forward, backward and update on a freshly sampled batch.
    /// Returns the batch loss; a non-finite loss aborts before any update.
    pub fn step(&mut self, train: &Dataset) -> Result<f64> {
        if train.task != self.model.spec.task {
            return Err(Error::config(format!(
                "model is for {}, dataset is {}",
                self.model.spec.task.name(),
                train.task.name()
            )));
        }
        let iteration = self.state.iteration;
        let lr = lr_at(&self.config, iteration);
        let use_half = self.config.half_resize && self.sampling.gen_bool(0.5);
        if use_half && self.half.is_none() {
            self.half = Some(half_resolution(train)?);
        }
        let ds = if use_half { self.half.as_ref().expect("built above") } else { train };
        let n = self.config.pixels_per_image.min(ds.pixels());
        let batch = build_batch(ds, self.config.images_per_batch, n, self.config.strategy, &mut self.sampling)?;
        let images = ds.stack(&batch.images)?.cast::<T>();
        let targets: Vec<Target> = batch.entries.iter().map(|e| e.target).collect();

        let mut g = if self.config.checked { Graph::checked() } else { Graph::new() };
        let bound = self.model.params.bind(&mut g);
        let out = self.model.forward_pipeline(
            &mut g,
            &bound,
            images,
            &batch.pixels(),
            Mode::Train,
            self.config.pipeline,
            &mut self.dropout,
        )?;
        let loss = task_loss(&mut g, self.model.spec.task, out, &targets)?;
        let value = g.value(loss).item()?.as_f64();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss at iteration {iteration}")));
        }
        let grads = g.backward(loss)?;
        let grads = self.model.params.collect_grads(&g, &bound, &grads);
        sgd_step(&mut self.model.params, &grads, &mut self.state, lr, self.config.momentum, self.config.weight_decay)?;
        self.state.epoch = self.state.iteration * self.config.images_per_batch / train.len();
        self.log.rows.push(LogRow { iteration, lr, loss: value, metrics: Vec::new() });
        Ok(value)
    }

    /// Trains until `config.iterations`, evaluating on `heldout` and
    /// checkpointing into `checkpoint_dir` at the configured cadences.
    pub fn run(&mut self, train: &Dataset, heldout: Option<&Dataset>, checkpoint_dir: Option<&Path>) -> Result<()> {
        if train.is_empty() {
            return Err(Error::contract("training set is empty"));
        }
        while self.state.iteration < self.config.iterations {
            self.step(train)?;
            let done = self.state.iteration;
            if let (Some(h), true) = (heldout, self.config.eval_every > 0 && done % self.config.eval_every == 0) {
                let report = evaluate(&mut self.model, h, &[1.0], DEFAULT_BUDGET)?;
                let row = self.log.rows.last_mut().expect("row pushed by step");
                row.metrics = report.columns().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            }
            if let (Some(dir), true) = (checkpoint_dir, self.config.checkpoint_every > 0 && done % self.config.checkpoint_every == 0) {
                self.checkpoint().save(dir)?;
            }
        }
        Ok(())
    }
}

/// Trains a fresh model under `config`.
pub fn train<T: Scalar>(config: &TrainConfig, spec: ModelSpec, data: &Dataset, heldout: Option<&Dataset>) -> Result<(Model<T>, TrainLog)> {
    let mut trainer = Trainer::<T>::new(config.clone(), spec)?;
    trainer.run(data, heldout, None)?;
    Ok((trainer.model, trainer.log))
}

/// Copy of `ds` at half resolution: bilinear images, 2×2 reduced targets
/// (top-left class, renormalized mean normal, any-edge).
pub fn half_resolution(ds: &Dataset) -> Result<Dataset> {
    let (h, w) = (ds.height, ds.width);
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(Error::shape(format!("cannot halve a {h}×{w} dataset")));
    }
    let (nh, nw) = (h / 2, w / 2);
    let images = ds.images.iter().map(|im| resize_bilinear(im, nh, nw)).collect::<Result<Vec<Tensor<f32>>>>()?;
    let block = |r: usize, c: usize| [(2 * r) * w + 2 * c, (2 * r) * w + 2 * c + 1, (2 * r + 1) * w + 2 * c, (2 * r + 1) * w + 2 * c + 1];
    let cells = || (0..nh).flat_map(move |r| (0..nw).map(move |c| (r, c)));
    let targets = ds
        .targets
        .iter()
        .map(|t| match t {
            TargetMap::Classes(v) => TargetMap::Classes(cells().map(|(r, c)| v[block(r, c)[0]]).collect()),
            TargetMap::Edges(v) => TargetMap::Edges(cells().map(|(r, c)| block(r, c).iter().map(|&i| v[i]).max().unwrap_or(0)).collect()),
            TargetMap::Normals(v) => TargetMap::Normals(
                cells()
                    .map(|(r, c)| {
                        let mut s = [0.0f64; 3];
                        for i in block(r, c) {
                            for k in 0..3 {
                                s[k] += f64::from(v[i][k]);
                            }
                        }
                        let n = s.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                        s.map(|x| (x / n) as f32)
                    })
                    .collect(),
            ),
        })
        .collect();
    Ok(Dataset { height: nh, width: nw, images, targets, ..ds.clone() })
}
