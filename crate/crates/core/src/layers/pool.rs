use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

struct MaxPoolRule {
    /// Flat input index chosen for each output cell.
    argmax: Vec<usize>,
}

impl<T: Scalar> BackwardRule<T> for MaxPoolRule {
    fn name(&self) -> &'static str {
        "maxpool2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let mut dx = inputs[0].zeros_like();
        let d = dx.data_mut();
        for (&i, &g) in self.argmax.iter().zip(grad.data()) {
            d[i] = d[i] + g;
        }
        Ok(vec![Some(dx)])
    }

    fn saved_scalars(&self) -> usize {
        self.argmax.len()
    }

    fn branch_fingerprint(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>) -> Option<u64> {
        let mut h = DefaultHasher::new();
        self.argmax.hash(&mut h);
        Some(h.finish())
    }
}

/// Window max over `[B×C×H×W]`; ties resolve to the lowest flat index.
pub fn maxpool2d<T: Scalar>(graph: &mut Graph<T>, x: Var, k: usize, stride: usize) -> Result<Var> {
    let [b, c, h, w] = *graph.shape(x) else {
        return Err(Error::shape(format!("maxpool2d input must be rank 4, got {:?}", graph.shape(x))));
    };
    if k == 0 || stride == 0 {
        return Err(Error::shape("maxpool2d window and stride must be positive"));
    }
    if h % stride != 0 || w % stride != 0 || h < k || w < k || (h - k) % stride != 0 || (w - k) % stride != 0 {
        return Err(Error::shape(format!("maxpool2d k={k} stride={stride} does not tile {h}×{w}")));
    }
    let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let src = graph.value(x).data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oi in 0..oh {
            for oj in 0..ow {
                let mut best = base + oi * stride * w + oj * stride;
                for di in 0..k {
                    for dj in 0..k {
                        let idx = base + (oi * stride + di) * w + oj * stride + dj;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                }
                out.push(src[best]);
                argmax.push(best);
            }
        }
    }
    let value = Tensor::from_vec(&[b, c, oh, ow], out)?;
    graph.record(vec![x], value, Box::new(MaxPoolRule { argmax }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_f64_slice(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = maxpool2d(&mut g, x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_to_one_cell() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::full(&[1, 1, 4, 4], 7.0).unwrap());
        let y = maxpool2d(&mut g, x, 2, 2).unwrap();
        assert_eq!(g.value(y).data(), &[7.0; 4]);
        let l = g.sum(y, &[]).unwrap();
        let grads = g.backward(l).unwrap();
        let dx = grads.get(x).unwrap().data();
        let expected: Vec<f64> = (0..16).map(|i| if (i / 4) % 2 == 0 && i % 2 == 0 { 1.0 } else { 0.0 }).collect();
        assert_eq!(dx, &expected[..]);
    }

    #[test]
    fn odd_extent_is_shape_error() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 3, 4]).unwrap());
        assert!(matches!(maxpool2d(&mut g, x, 2, 2), Err(Error::Shape(_))));
    }
}
