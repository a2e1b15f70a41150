//! Central finite-difference check of backward rules.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Index into the parameter list of the worst scalar.
    pub worst_param: usize,
    /// Flat index of the worst scalar inside that parameter.
    pub worst_index: usize,
    pub checked: usize,
    /// Checked probes whose ±step at `eps` crossed a kink and which were
    /// taken at a smaller step instead.
    pub refined: usize,
    /// Probes whose ±step crossed a kink (a ReLU or pooling decision
    /// changed) at every tried step, where a central difference is not a
    /// derivative.
    pub skipped: usize,
}

/// Steps tried per probe, as fractions of `eps`, until neither side
/// changes a branch decision.
const STEP_SCALES: [f64; 3] = [1.0, 0.1, 0.01];

/// Compares analytic gradients of `f` with central differences for every
/// scalar of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let all: Vec<Vec<usize>> = params.iter().map(|p| (0..p.len()).collect()).collect();
    check_indices(&f, params, eps, &all)
}

/// Like [`grad_check`] but probes at most `per_param` scalars of each
/// parameter, chosen without replacement from `seed`.
pub fn grad_check_sampled<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<Vec<usize>> = params
        .iter()
        .map(|p| {
            if p.len() <= per_param {
                (0..p.len()).collect()
            } else {
                let mut idx = sample(&mut rng, p.len(), per_param).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();
    check_indices(&f, params, eps, &picks)
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>]) -> Result<(f64, u64)>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    Ok((scalar_loss(&g, loss)?, g.branch_fingerprint()))
}

fn scalar_loss(g: &Graph<f64>, loss: Var) -> Result<f64> {
    let v = g.value(loss);
    if v.len() != 1 {
        return Err(Error::contract(format!("grad_check needs a scalar loss, got shape {:?}", v.shape())));
    }
    Ok(v.data()[0])
}

fn check_indices<F>(f: &F, params: &[Tensor<f64>], eps: f64, picks: &[Vec<usize>]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {eps} must be positive")));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    scalar_loss(&g, loss)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();
    let branch = g.branch_fingerprint();
    drop(g);

    let mut report =
        GradCheckReport { max_rel_err: 0.0, worst_param: 0, worst_index: 0, checked: 0, refined: 0, skipped: 0 };
    let mut probe: Vec<Tensor<f64>> = params.to_vec();
    for (pi, indices) in picks.iter().enumerate() {
        for &i in indices {
            let orig = probe[pi].data()[i];
            let mut numeric = None;
            for (k, scale) in STEP_SCALES.iter().enumerate() {
                let h = eps * scale;
                probe[pi].data_mut()[i] = orig + h;
                let (plus, bp) = evaluate(f, &probe)?;
                probe[pi].data_mut()[i] = orig - h;
                let (minus, bm) = evaluate(f, &probe)?;
                probe[pi].data_mut()[i] = orig;
                if bp == branch && bm == branch {
                    numeric = Some((plus - minus) / (2.0 * h));
                    report.refined += usize::from(k > 0);
                    break;
                }
            }
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic[pi].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = pi;
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
