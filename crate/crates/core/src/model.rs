//! Backbone, sampler and predictor wired into one network.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::data::TaskKind;
use crate::error::{Error, Result};
use crate::heads::MlpSpec;
use crate::hypercolumn::{sample_hypercolumn, PixelCoord};
use crate::layers::{BackboneSpec, FeatureMaps, Mode};
use crate::params::{Bound, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub mlp: MlpSpec,
    pub task: TaskKind,
}

impl ModelSpec {
    /// Default backbone and a 3×128 predictor sized for `task`.
    pub fn for_task(task: TaskKind) -> Result<Self> {
        let backbone = BackboneSpec::default();
        let mlp = MlpSpec::new(backbone.hypercolumn_dim()?, task.outputs());
        Ok(ModelSpec { backbone, mlp, task })
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.mlp.validate()?;
        let d = self.backbone.hypercolumn_dim()?;
        if self.mlp.input_dim != d {
            return Err(Error::config(format!("mlp input {} does not match hypercolumn width {d}", self.mlp.input_dim)));
        }
        if self.mlp.outputs != self.task.outputs() {
            return Err(Error::config(format!(
                "{} task needs {} outputs, mlp has {}",
                self.task.name(),
                self.task.outputs(),
                self.mlp.outputs
            )));
        }
        Ok(())
    }
}

/// How hypercolumns reach the predictor during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PipelineMode {
    /// Interpolate taps only at the sampled pixels.
    Sampled,
    /// Build the full-resolution hypercolumn matrix, then keep sampled rows.
    MaskedDense,
    /// Upsample each tap to full resolution, concatenate, run the predictor
    /// on every pixel and keep sampled outputs.
    DenseUpsample,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [PipelineMode::DenseUpsample, PipelineMode::MaskedDense, PipelineMode::Sampled];

    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::Sampled => "sampled",
            PipelineMode::MaskedDense => "masked_dense",
            PipelineMode::DenseUpsample => "dense_upsample",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown pipeline mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Gaussian-initialized model drawn from the init stream of `seed`.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let mut params = ParamStore::new();
        spec.backbone.init_params(&mut params, &mut rng)?;
        spec.mlp.init_params(&mut params, &mut rng)?;
        Ok(Model { spec, params })
    }

    /// Model over `params` loaded elsewhere; names, kinds and shapes must
    /// match what `spec` initializes.
    pub fn with_params(spec: ModelSpec, params: ParamStore<T>) -> Result<Self> {
        let fresh = Model::<T>::new(spec.clone(), 0)?;
        let layout = |s: &ParamStore<T>| -> Vec<(String, crate::params::ParamKind, Vec<usize>)> {
            s.params().iter().map(|p| (p.name.clone(), p.kind, p.value.shape().to_vec())).collect()
        };
        if layout(&fresh.params) != layout(&params) {
            return Err(Error::Corruption("stored parameters do not match the model architecture".into()));
        }
        Ok(Model { spec, params })
    }

    pub fn features(
        &mut self,
        graph: &mut Graph<T>,
        bound: &Bound,
        images: Tensor<T>,
        mode: Mode,
    ) -> Result<FeatureMaps> {
        let x = graph.constant(images);
        self.spec.backbone.forward(graph, &mut self.params, bound, x, mode)
    }

    /// Predictor outputs (pre-activation) for `pixels` of the `[B×C×H×W]`
    /// batch `images`.
    pub fn forward_pixels<R: Rng + ?Sized>(
        &mut self,
        graph: &mut Graph<T>,
        bound: &Bound,
        images: Tensor<T>,
        pixels: &[(usize, PixelCoord)],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.forward_pipeline(graph, bound, images, pixels, mode, PipelineMode::Sampled, rng)
    }

    /// [`Model::forward_pixels`] through an explicit hypercolumn pipeline.
    /// All pipelines give the same values up to the batch statistics of an
    /// input batch-norm layer.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_pipeline<R: Rng + ?Sized>(
        &mut self,
        graph: &mut Graph<T>,
        bound: &Bound,
        images: Tensor<T>,
        pixels: &[(usize, PixelCoord)],
        mode: Mode,
        pipeline: PipelineMode,
        rng: &mut R,
    ) -> Result<Var> {
        let (b, h, w) = (images.dim(0)?, images.dim(2)?, images.dim(3)?);
        let fmaps = self.features(graph, bound, images, mode)?;
        let all: Vec<(usize, PixelCoord)> = (0..b)
            .flat_map(|s| (0..h).flat_map(move |r| (0..w).map(move |c| (s, PixelCoord::new(r, c)))))
            .collect();
        let rows: Vec<usize> = pixels.iter().map(|(s, p)| (s * h + p.row) * w + p.col).collect();
        match pipeline {
            PipelineMode::Sampled => {
                let hc = sample_hypercolumn(graph, &fmaps, (h, w), pixels)?;
                self.spec.mlp.forward(graph, &mut self.params, bound, hc.features, mode, rng)
            }
            PipelineMode::MaskedDense => {
                let hc = sample_hypercolumn(graph, &fmaps, (h, w), &all)?;
                let picked = graph.gather_rows(hc.features, &rows)?;
                self.spec.mlp.forward(graph, &mut self.params, bound, picked, mode, rng)
            }
            PipelineMode::DenseUpsample => {
                let mut parts = Vec::with_capacity(fmaps.maps.len());
                for (map, meta) in fmaps.maps.iter().zip(&fmaps.metas) {
                    let single = FeatureMaps { maps: vec![*map], metas: vec![meta.clone()] };
                    parts.push(sample_hypercolumn(graph, &single, (h, w), &all)?.features);
                }
                let dense = graph.concat_cols(&parts)?;
                let out = self.spec.mlp.forward(graph, &mut self.params, bound, dense, mode, rng)?;
                graph.gather_rows(out, &rows)
            }
        }
    }
}
