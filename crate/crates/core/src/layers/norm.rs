use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig { eps: 1e-5, momentum: 0.1 }
    }
}

/// `(outer, channels, inner)` such that element `(o, c, i)` lives at
/// `(o·C + c)·inner + i`.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [s, c] => Ok((s, c, 1)),
        [b, c, h, w] => Ok((b, c, h * w)),
        _ => Err(Error::shape(format!("batchnorm expects [S×C] or [B×C×H×W], got {shape:?}"))),
    }
}

struct BatchNormTrainRule<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    dims: (usize, usize, usize),
}

impl<T: Scalar> BackwardRule<T> for BatchNormTrainRule<T> {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, ch, inner) = self.dims;
        let n = T::from_f64((outer * inner) as f64);
        let gamma = inputs[1].data();
        let dy = grad.data();
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    dbeta[c] = dbeta[c] + dy[i];
                    dgamma[c] = dgamma[c] + dy[i] * self.xhat[i];
                }
            }
        }
        let mut dx = inputs[0].zeros_like();
        let d = dx.data_mut();
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                let scale = gamma[c] * self.inv_std[c] / n;
                for i in base..base + inner {
                    d[i] = scale * (n * dy[i] - dbeta[c] - self.xhat[i] * dgamma[c]);
                }
            }
        }
        Ok(vec![
            Some(dx),
            Some(Tensor::from_vec(&[ch], dgamma)?),
            Some(Tensor::from_vec(&[ch], dbeta)?),
        ])
    }

    fn saved_scalars(&self) -> usize {
        self.xhat.len() + self.inv_std.len()
    }
}

struct BatchNormEvalRule<T> {
    mean: Vec<T>,
    inv_std: Vec<T>,
    dims: (usize, usize, usize),
}

impl<T: Scalar> BackwardRule<T> for BatchNormEvalRule<T> {
    fn name(&self) -> &'static str {
        "batchnorm_eval"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, ch, inner) = self.dims;
        let x = inputs[0].data();
        let gamma = inputs[1].data();
        let dy = grad.data();
        let mut dx = inputs[0].zeros_like();
        let mut dgamma = vec![T::zero(); ch];
        let mut dbeta = vec![T::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = (o * ch + c) * inner;
                for i in base..base + inner {
                    dx.data_mut()[i] = dy[i] * gamma[c] * self.inv_std[c];
                    dgamma[c] = dgamma[c] + dy[i] * (x[i] - self.mean[c]) * self.inv_std[c];
                    dbeta[c] = dbeta[c] + dy[i];
                }
            }
        }
        Ok(vec![
            Some(dx),
            Some(Tensor::from_vec(&[ch], dgamma)?),
            Some(Tensor::from_vec(&[ch], dbeta)?),
        ])
    }
}

/// Per-channel normalization followed by the `gamma`/`beta` affine map.
///
/// Train mode normalizes with biased batch statistics and folds them into
/// the running estimates; eval mode uses the running estimates only.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm<T: Scalar>(
    graph: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cfg: BatchNormConfig,
    mode: Mode,
) -> Result<Var> {
    let dims @ (outer, ch, inner) = layout(graph.shape(x))?;
    for (what, v) in [("gamma", graph.shape(gamma)), ("beta", graph.shape(beta))] {
        if v != [ch] {
            return Err(Error::shape(format!("batchnorm {what} {v:?} for {ch} channels")));
        }
    }
    if running_mean.shape() != [ch] || running_var.shape() != [ch] {
        return Err(Error::shape(format!("batchnorm running stats do not match {ch} channels")));
    }
    let eps = T::from_f64(cfg.eps);
    let xs = graph.value(x).data();
    let g = graph.value(gamma).data();
    let bt = graph.value(beta).data();
    let mut out = vec![T::zero(); xs.len()];
    match mode {
        Mode::Train => {
            let count = outer * inner;
            if count < 2 {
                return Err(Error::contract(format!("batchnorm train mode needs >= 2 values per channel, got {count}")));
            }
            let n = T::from_f64(count as f64);
            let mut mean = vec![T::zero(); ch];
            let mut var = vec![T::zero(); ch];
            for o in 0..outer {
                for (c, m) in mean.iter_mut().enumerate() {
                    let base = (o * ch + c) * inner;
                    *m = *m + xs[base..base + inner].iter().copied().sum::<T>();
                }
            }
            for m in mean.iter_mut() {
                *m = *m / n;
            }
            for o in 0..outer {
                for (c, v) in var.iter_mut().enumerate() {
                    let base = (o * ch + c) * inner;
                    *v = *v + xs[base..base + inner].iter().map(|&e| (e - mean[c]) * (e - mean[c])).sum::<T>();
                }
            }
            for v in var.iter_mut() {
                *v = *v / n;
            }
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = vec![T::zero(); xs.len()];
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    for i in base..base + inner {
                        xhat[i] = (xs[i] - mean[c]) * inv_std[c];
                        out[i] = g[c] * xhat[i] + bt[c];
                    }
                }
            }
            let m = T::from_f64(cfg.momentum);
            for c in 0..ch {
                let rm = &mut running_mean.data_mut()[c];
                *rm = (T::one() - m) * *rm + m * mean[c];
                let rv = &mut running_var.data_mut()[c];
                *rv = (T::one() - m) * *rv + m * var[c];
            }
            let value = Tensor::from_vec(graph.shape(x), out)?;
            graph.record(vec![x, gamma, beta], value, Box::new(BatchNormTrainRule { xhat, inv_std, dims }))
        }
        Mode::Eval => {
            let mean = running_mean.data().to_vec();
            if running_var.data().iter().any(|&v| v < T::zero()) {
                return Err(Error::Domain("negative running variance".into()));
            }
            let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            for o in 0..outer {
                for c in 0..ch {
                    let base = (o * ch + c) * inner;
                    let a = g[c] * inv_std[c];
                    let b = bt[c] - mean[c] * a;
                    for i in base..base + inner {
                        out[i] = xs[i] * a + b;
                    }
                }
            }
            let value = Tensor::from_vec(graph.shape(x), out)?;
            graph.record(vec![x, gamma, beta], value, Box::new(BatchNormEvalRule { mean, inv_std, dims }))
        }
    }
}
