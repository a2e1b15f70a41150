use rand::Rng;

use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::Mode;

struct DropoutRule<T> {
    /// 0 for dropped scalars, `1/(1−r)` for survivors.
    mask: Vec<T>,
}

impl<T: Scalar> BackwardRule<T> for DropoutRule<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let data = grad.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Ok(vec![Some(Tensor::from_vec(grad.shape(), data)?)])
    }

    fn saved_scalars(&self) -> usize {
        self.mask.len()
    }
}

/// Inverted dropout. Eval mode and `rate == 0` return `x` unchanged.
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    graph: &mut Graph<T>,
    x: Var,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..graph.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let input = graph.value(x);
    let data = input.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let value = Tensor::from_vec(input.shape(), data)?;
    graph.record(vec![x], value, Box::new(DropoutRule { mask }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[4], 1.5).unwrap());
        assert_eq!(dropout(&mut g, x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut g, x, 0.0, Mode::Eval, &mut rng).unwrap(), x);
        assert_eq!(dropout(&mut g, x, 0.7, Mode::Eval, &mut rng).unwrap(), x);
    }

    #[test]
    fn half_rate_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[100_000], 1.0).unwrap());
        let y = dropout(&mut g, x, 0.5, Mode::Train, &mut rng).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / 1e5;
        assert!((0.98..=1.02).contains(&mean), "mean {mean}");
    }

    #[test]
    fn rate_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[4], 1.0).unwrap());
        assert!(matches!(dropout(&mut g, x, 1.0, Mode::Train, &mut rng), Err(Error::Contract(_))));
        assert!(matches!(dropout(&mut g, x, -0.1, Mode::Train, &mut rng), Err(Error::Contract(_))));
    }
}
