use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Momentum buffers aligned with a [`ParamStore`], plus progress counters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    /// `None` for entries that are not trained.
    pub velocity: Vec<Option<Tensor<T>>>,
    pub iteration: usize,
    pub epoch: usize,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let velocity = store.params().iter().map(|p| p.kind.trainable().then(|| p.value.zeros_like())).collect();
        OptimState { velocity, iteration: 0, epoch: 0 }
    }

    pub fn bitwise_eq(&self, other: &OptimState<T>) -> bool {
        self.iteration == other.iteration
            && self.epoch == other.epoch
            && self.velocity.len() == other.velocity.len()
            && self.velocity.iter().zip(&other.velocity).all(|(a, b)| match (a, b) {
                (Some(a), Some(b)) => a.bitwise_eq(b),
                (None, None) => true,
                _ => false,
            })
    }
}

/// One momentum SGD update:
/// `v ← momentum·v + grad + weight_decay·param`, `param ← param − lr·v`.
/// Weight decay touches only entries whose kind decays.
pub fn sgd_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &[Option<Tensor<T>>],
    state: &mut OptimState<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let n = store.params().len();
    if grads.len() != n || state.velocity.len() != n {
        return Err(Error::contract(format!(
            "{} gradients and {} velocity buffers for {n} parameters",
            grads.len(),
            state.velocity.len()
        )));
    }
    for (p, g) in store.params().iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.value.shape() {
                return Err(Error::shape(format!("gradient {:?} for {} of shape {:?}", g.shape(), p.name, p.value.shape())));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of {}", p.name)));
            }
        }
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for ((p, g), v) in store.params_mut().iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        let (Some(g), Some(v)) = (g, v.as_mut()) else { continue };
        let wd = T::from_f64(if p.kind.decays() { weight_decay } else { 0.0 });
        for ((x, &gi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *x;
            *x = *x - lr * *vi;
        }
    }
    state.iteration += 1;
    Ok(())
}
