use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

use super::{batchnorm, conv2d, maxpool2d, BatchNormConfig, Mode};

/// Convolutional stack: stages of `num_convs` 3×3 convolutions, a 2×2 max
/// pool between stages, and an optional 1×1 head on top.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneSpec {
    pub in_channels: usize,
    /// `(num_convs, channels)` per stage.
    pub stages: Vec<(usize, usize)>,
    /// Width of the final 1×1 stage; 0 disables it.
    pub head_channels: usize,
    pub kernel: usize,
    pub taps: Vec<String>,
    pub batch_norm: bool,
    pub bn: BatchNormConfig,
    /// Standard deviation of the Gaussian weight init.
    pub init_sigma: f64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec {
            in_channels: 3,
            stages: vec![(2, 8), (2, 16), (2, 32), (2, 64)],
            head_channels: 128,
            kernel: 3,
            taps: ["conv1_2", "conv2_2", "conv3_2", "conv4_2", "head"].map(String::from).to_vec(),
            batch_norm: true,
            bn: BatchNormConfig::default(),
            init_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMeta {
    pub name: String,
    pub channels: usize,
    /// Input pixels per feature cell along each axis.
    pub stride_product: usize,
}

/// Tapped feature maps in tap order, each `[B×C×H/s×W/s]`.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub maps: Vec<Var>,
    pub metas: Vec<LayerMeta>,
}

/// Geometry of one convolution in the stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride_product: usize,
    /// Max pool follows this layer.
    pub pool_after: bool,
}

impl BackboneSpec {
    /// Every convolution in execution order.
    pub fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut in_ch = self.in_channels;
        let mut stride = 1;
        for (si, &(n, ch)) in self.stages.iter().enumerate() {
            for ci in 0..n {
                let last_of_stage = ci + 1 == n;
                layers.push(Layer {
                    name: format!("conv{}_{}", si + 1, ci + 1),
                    in_ch,
                    out_ch: ch,
                    kernel: self.kernel,
                    stride_product: stride,
                    pool_after: last_of_stage && si + 1 < self.stages.len(),
                });
                in_ch = ch;
            }
            if si + 1 < self.stages.len() {
                stride *= 2;
            }
        }
        if self.head_channels > 0 {
            layers.push(Layer {
                name: "head".into(),
                in_ch,
                out_ch: self.head_channels,
                kernel: 1,
                stride_product: stride,
                pool_after: false,
            });
        }
        layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.stages.is_empty() || self.stages.iter().any(|&(n, c)| n == 0 || c == 0) {
            return Err(Error::config("backbone needs at least one stage with non-zero convs and channels"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("backbone kernel {} must be odd", self.kernel)));
        }
        if self.taps.is_empty() {
            return Err(Error::config("backbone needs at least one tap"));
        }
        self.metas().map(|_| ())
    }

    /// Metadata of every tap, in tap order.
    pub fn metas(&self) -> Result<Vec<LayerMeta>> {
        let layers = self.layers();
        self.taps
            .iter()
            .map(|t| {
                layers
                    .iter()
                    .find(|l| &l.name == t)
                    .map(|l| LayerMeta { name: l.name.clone(), channels: l.out_ch, stride_product: l.stride_product })
                    .ok_or_else(|| Error::config(format!("unknown tap layer {t}")))
            })
            .collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers().into_iter().map(|l| l.name).collect()
    }

    /// Hypercolumn width: the sum of tap channels.
    pub fn hypercolumn_dim(&self) -> Result<usize> {
        Ok(self.metas()?.iter().map(|m| m.channels).sum())
    }

    /// Largest downsampling factor in the stack; image sizes must be a
    /// multiple of it.
    pub fn max_stride(&self) -> usize {
        1 << (self.stages.len() - 1)
    }

    /// Adds freshly initialized parameters to `store`.
    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.validate()?;
        for l in self.layers() {
            let w = Tensor::gaussian(&[l.out_ch, l.in_ch, l.kernel, l.kernel], 0.0, self.init_sigma, rng)?;
            store.insert(format!("{}.weight", l.name), ParamKind::Weight, w)?;
            if self.batch_norm {
                store.insert(format!("{}.bn.gamma", l.name), ParamKind::Gamma, Tensor::full(&[l.out_ch], T::one())?)?;
                store.insert(format!("{}.bn.beta", l.name), ParamKind::Beta, Tensor::zeros(&[l.out_ch])?)?;
                store.insert(format!("{}.bn.running_mean", l.name), ParamKind::RunningMean, Tensor::zeros(&[l.out_ch])?)?;
                store.insert(format!("{}.bn.running_var", l.name), ParamKind::RunningVar, Tensor::full(&[l.out_ch], T::one())?)?;
            } else {
                store.insert(format!("{}.bias", l.name), ParamKind::Bias, Tensor::zeros(&[l.out_ch])?)?;
            }
        }
        Ok(())
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = *shape else {
            return Err(Error::shape(format!("backbone input must be [B×C×H×W], got {shape:?}")));
        };
        if c != self.in_channels {
            return Err(Error::shape(format!("backbone expects {} channels, got {c}", self.in_channels)));
        }
        let s = self.max_stride();
        if h % s != 0 || w % s != 0 {
            return Err(Error::shape(format!("image {h}×{w} is not a multiple of the backbone stride {s}")));
        }
        Ok(())
    }

    /// Runs the stack on `x` and returns the tapped maps.
    ///
    /// Train mode updates batch-norm running statistics inside `store`.
    pub fn forward<T: Scalar>(
        &self,
        graph: &mut Graph<T>,
        store: &mut ParamStore<T>,
        bound: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<FeatureMaps> {
        let metas = self.metas()?;
        self.check_input(graph.shape(x))?;
        let mut maps: Vec<Option<Var>> = vec![None; metas.len()];
        let mut h = x;
        for l in self.layers() {
            let w = bound.var(&format!("{}.weight", l.name))?;
            let pad = (l.kernel - 1) / 2;
            if self.batch_norm {
                h = conv2d(graph, h, w, None, 1, pad)?;
                let gamma = bound.var(&format!("{}.bn.gamma", l.name))?;
                let beta = bound.var(&format!("{}.bn.beta", l.name))?;
                let (rm, rv) = store.pair_mut(&format!("{}.bn.running_mean", l.name), &format!("{}.bn.running_var", l.name))?;
                h = batchnorm(graph, h, gamma, beta, rm, rv, self.bn, mode)?;
            } else {
                let b = bound.var(&format!("{}.bias", l.name))?;
                h = conv2d(graph, h, w, Some(b), 1, pad)?;
            }
            h = graph.relu(h)?;
            for (slot, m) in maps.iter_mut().zip(&metas) {
                if m.name == l.name {
                    *slot = Some(h);
                }
            }
            if l.pool_after {
                h = maxpool2d(graph, h, 2, 2)?;
            }
        }
        let maps = maps.into_iter().map(|m| m.expect("every tap resolved by metas()")).collect();
        Ok(FeatureMaps { maps, metas })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_metas() {
        let spec = BackboneSpec { in_channels: 1, ..BackboneSpec::default() };
        let metas = spec.metas().unwrap();
        assert_eq!(metas.iter().map(|m| m.stride_product).collect::<Vec<_>>(), [1, 2, 4, 8, 8]);
        assert_eq!(metas.iter().map(|m| m.channels).collect::<Vec<_>>(), [8, 16, 32, 64, 128]);
        assert_eq!(spec.hypercolumn_dim().unwrap(), 248);
    }

    #[test]
    fn vgg_like_dim() {
        let spec = BackboneSpec {
            stages: vec![(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            head_channels: 4096,
            taps: ["conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3", "head"].map(String::from).to_vec(),
            ..BackboneSpec::default()
        };
        assert_eq!(spec.hypercolumn_dim().unwrap(), 5568);
    }

    #[test]
    fn unknown_tap_is_config_error() {
        let spec = BackboneSpec { taps: vec!["conv9_1".into()], ..BackboneSpec::default() };
        assert!(matches!(spec.metas(), Err(Error::Config(_))));
    }
}
