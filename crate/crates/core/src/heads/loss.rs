use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss op whose input gradient is precomputed during the forward pass.
struct FixedGradRule<T> {
    name: &'static str,
    grad: Tensor<T>,
}

impl<T: Scalar> BackwardRule<T> for FixedGradRule<T> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let g = grad_out.item()?;
        Ok(vec![Some(self.grad.map(|v| v * g))])
    }

    fn saved_scalars(&self) -> usize {
        self.grad.len()
    }
}

fn record_loss<T: Scalar>(graph: &mut Graph<T>, x: Var, name: &'static str, loss: f64, grad: Vec<f64>) -> Result<Var> {
    let grad = Tensor::from_f64_slice(graph.shape(x), &grad)?;
    graph.record(vec![x], Tensor::scalar(T::from_f64(loss)), Box::new(FixedGradRule { name, grad }))
}

/// Mean cross-entropy of softmax(`logits` `[S×K]`) over rows whose label
/// is not `ignore`. Computed in 64-bit with max subtraction.
pub fn softmax_xent<T: Scalar>(graph: &mut Graph<T>, logits: Var, labels: &[u8], ignore: Option<u8>) -> Result<Var> {
    let [s, k] = *graph.shape(logits) else {
        return Err(Error::shape(format!("softmax_xent expects [S×K], got {:?}", graph.shape(logits))));
    };
    if labels.len() != s {
        return Err(Error::shape(format!("{} labels for {s} rows", labels.len())));
    }
    let kept = labels.iter().filter(|&&l| Some(l) != ignore).count();
    if kept == 0 {
        return Err(Error::contract("every row is ignored"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| Some(l) != ignore && l as usize >= k) {
        return Err(Error::contract(format!("label {bad} outside {k} classes")));
    }
    let z = graph.value(logits).to_f64_vec();
    let inv = 1.0 / kept as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; s * k];
    for (r, &label) in labels.iter().enumerate() {
        if Some(label) == ignore {
            continue;
        }
        let row = &z[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[label as usize];
        for j in 0..k {
            grad[r * k + j] = (row[j] - lse).exp() * inv;
        }
        grad[r * k + label as usize] -= inv;
    }
    record_loss(graph, logits, "softmax_xent", loss * inv, grad)
}

/// Mean squared distance between `pred` `[S×3]` and unit targets.
pub fn euclidean_normal_loss<T: Scalar>(graph: &mut Graph<T>, pred: Var, targets: &[[f64; 3]]) -> Result<Var> {
    let s = match *graph.shape(pred) {
        [s, 3] => s,
        ref other => return Err(Error::shape(format!("normal loss expects [S×3], got {other:?}"))),
    };
    if targets.len() != s {
        return Err(Error::shape(format!("{} targets for {s} rows", targets.len())));
    }
    if let Some(t) = targets.iter().find(|t| ((t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt() - 1.0).abs() > 1e-4) {
        return Err(Error::contract(format!("target {t:?} is not unit length")));
    }
    let p = graph.value(pred).to_f64_vec();
    let inv = 1.0 / s as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; s * 3];
    for (r, t) in targets.iter().enumerate() {
        for a in 0..3 {
            let d = p[r * 3 + a] - t[a];
            loss += d * d;
            grad[r * 3 + a] = 2.0 * d * inv;
        }
    }
    record_loss(graph, pred, "euclidean_normal_loss", loss * inv, grad)
}

/// Class-balanced sigmoid cross-entropy over `logits` `[S×1]`:
/// `½·(mean loss over positives + mean loss over negatives)`.
pub fn balanced_bce<T: Scalar>(graph: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let s = match *graph.shape(logits) {
        [s, 1] => s,
        ref other => return Err(Error::shape(format!("balanced_bce expects [S×1], got {other:?}"))),
    };
    if labels.len() != s {
        return Err(Error::shape(format!("{} labels for {s} rows", labels.len())));
    }
    if s == 0 {
        return Err(Error::contract("empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::contract(format!("edge label {bad} is not binary")));
    }
    let z = graph.value(logits).to_f64_vec();
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = s - pos;
    let (cp, cn) = (0.5 / pos.max(1) as f64, 0.5 / neg.max(1) as f64);
    let (mut lp, mut ln) = (0.0, 0.0);
    let mut grad = vec![0.0; s];
    for (i, (&zi, &l)) in z.iter().zip(labels).enumerate() {
        if l == 1 {
            lp += softplus(-zi);
            grad[i] = (sigmoid(zi) - 1.0) * cp;
        } else {
            ln += softplus(zi);
            grad[i] = sigmoid(zi) * cn;
        }
    }
    record_loss(graph, logits, "balanced_bce", lp * cp + ln * cn, grad)
}
