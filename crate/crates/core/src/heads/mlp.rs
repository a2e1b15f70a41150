use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{batchnorm, dropout, BatchNormConfig, Mode};
use crate::params::{Bound, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// Per-row perceptron over hypercolumn features.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub outputs: usize,
    /// Applied after every hidden activation in train mode.
    pub dropout: f64,
    /// Batch-normalize the input features first.
    pub input_bn: bool,
    pub bn: BatchNormConfig,
    /// Gaussian init std; `None` draws from N(0, 2/fan_in).
    pub init_sigma: Option<f64>,
    /// Init of the last layer when it differs from `init_sigma`.
    pub final_sigma: Option<f64>,
}

impl MlpSpec {
    pub fn new(input_dim: usize, outputs: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden: vec![128, 128, 128],
            outputs,
            dropout: 0.1,
            input_bn: false,
            bn: BatchNormConfig::default(),
            init_sigma: None,
            final_sigma: None,
        }
    }

    /// `(in, out)` of every fully connected layer.
    pub fn widths(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.outputs);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.outputs == 0 || self.hidden.contains(&0) {
            return Err(Error::config("mlp widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("mlp dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn init_params<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<()> {
        self.validate()?;
        if self.input_bn {
            let d = self.input_dim;
            store.insert("mlp.bn.gamma", ParamKind::Gamma, Tensor::full(&[d], T::one())?)?;
            store.insert("mlp.bn.beta", ParamKind::Beta, Tensor::zeros(&[d])?)?;
            store.insert("mlp.bn.running_mean", ParamKind::RunningMean, Tensor::zeros(&[d])?)?;
            store.insert("mlp.bn.running_var", ParamKind::RunningVar, Tensor::full(&[d], T::one())?)?;
        }
        let widths = self.widths();
        for (i, &(fan_in, fan_out)) in widths.iter().enumerate() {
            let last = i + 1 == widths.len();
            let he = (2.0 / fan_in as f64).sqrt();
            let sigma = match (last, self.final_sigma, self.init_sigma) {
                (true, Some(s), _) => s,
                (_, _, Some(s)) => s,
                _ => he,
            };
            store.insert(format!("mlp.fc{}.weight", i + 1), ParamKind::Weight, Tensor::gaussian(&[fan_in, fan_out], 0.0, sigma, rng)?)?;
            store.insert(format!("mlp.fc{}.bias", i + 1), ParamKind::Bias, Tensor::zeros(&[fan_out])?)?;
        }
        Ok(())
    }

    /// `[S×D] → [S×K]`, each row independent of the others in eval mode.
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<T>,
        store: &mut ParamStore<T>,
        bound: &Bound,
        h: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        match graph.shape(h) {
            [_, d] if *d == self.input_dim => {}
            other => return Err(Error::shape(format!("mlp expects [S×{}], got {other:?}", self.input_dim))),
        }
        let mut x = h;
        if self.input_bn {
            let (gamma, beta) = (bound.var("mlp.bn.gamma")?, bound.var("mlp.bn.beta")?);
            let (rm, rv) = store.pair_mut("mlp.bn.running_mean", "mlp.bn.running_var")?;
            x = batchnorm(graph, x, gamma, beta, rm, rv, self.bn, mode)?;
        }
        let n = self.widths().len();
        for i in 1..=n {
            let w = bound.var(&format!("mlp.fc{i}.weight"))?;
            let b = bound.var(&format!("mlp.fc{i}.bias"))?;
            x = graph.matmul(x, w)?;
            x = graph.add_bias(x, b)?;
            if i < n {
                x = graph.relu(x)?;
                x = dropout(graph, x, self.dropout, mode, rng)?;
            }
        }
        Ok(x)
    }
}
