mod common;

use pixelnet::autodiff::{grad_check, ElementwiseOp, Graph, ReduceOp, Var};
use pixelnet::tensor::Tensor;
use pixelnet::Result;
use proptest::prelude::*;
use rand::Rng;

use common::{rng, uniform_vec};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn random(r: &mut rand_chacha::ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    tensor(shape, uniform_vec(r, n, lo, hi))
}

/// `Σ wᵢ·yᵢ` with fixed positive weights, so every output scalar matters.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = random(&mut rng(seed ^ 0xabcdef), &shape, 0.5, 1.5);
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p, &[])
}

fn check<F>(f: F, params: &[Tensor<f64>]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(f, params, EPS).unwrap();
    assert!(report.skipped * 10 <= report.checked.max(1), "too many kink crossings: {report:?}");
    report.max_rel_err
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_and_bias(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let params = [random(&mut r, &[m, k], -1.0, 1.0), random(&mut r, &[k, n], -1.0, 1.0), random(&mut r, &[n], -1.0, 1.0)];
        let err = check(|g, v| {
            let y = g.matmul(v[0], v[1])?;
            let y = g.add_bias(y, v[2])?;
            weighted_sum(g, y, seed)
        }, &params);
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn binary_pointwise(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = [r.gen_range(1..4), r.gen_range(1..5)];
        let params = [random(&mut r, &shape, -2.0, 2.0), random(&mut r, &shape, -2.0, 2.0)];
        let err = check(|g, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.sub(v[0], v[1])?;
            let p = g.mul(a, s)?;
            let q = g.mul(p, v[1])?;
            weighted_sum(g, q, seed)
        }, &params);
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn unary_pointwise(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = [r.gen_range(1..4), r.gen_range(1..5)];
        let params = [random(&mut r, &shape, -2.0, 2.0), random(&mut r, &shape, 0.2, 3.0)];
        let c = r.gen_range(-3.0..3.0);
        let err = check(|g, v| {
            let a = g.relu(v[0])?;
            let b = g.sigmoid(v[0])?;
            let e = g.exp(v[0])?;
            let l = g.log(v[1])?;
            let s = g.elementwise(ElementwiseOp::Scale(c), &[l])?;
            let mut acc = g.add(a, b)?;
            for t in [e, s] {
                acc = g.add(acc, t)?;
            }
            weighted_sum(g, acc, seed)
        }, &params);
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn reductions_and_reshape(seed in any::<u64>()) {
        let mut r = rng(seed);
        let shape = [r.gen_range(1..4), r.gen_range(1..4), r.gen_range(2..5)];
        let axis = r.gen_range(0..3);
        let params = [random(&mut r, &shape, -1.0, 1.0)];
        let err = check(|g, v| {
            let s = g.reduce(ReduceOp::Sum, v[0], &[axis])?;
            let m = g.reduce(ReduceOp::Mean, v[0], &[axis])?;
            let x = g.reduce(ReduceOp::Max, v[0], &[axis])?;
            let t = g.add(s, m)?;
            let t = g.add(t, x)?;
            let n = g.shape(t).iter().product::<usize>();
            let flat = g.reshape(t, &[n])?;
            weighted_sum(g, flat, seed)
        }, &params);
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn concat_and_gather(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rows = r.gen_range(1..5);
        let (w1, w2) = (r.gen_range(1..4), r.gen_range(1..4));
        let params = [random(&mut r, &[rows, w1], -1.0, 1.0), random(&mut r, &[rows, w2], -1.0, 1.0)];
        let picks: Vec<usize> = (0..r.gen_range(1..8)).map(|_| r.gen_range(0..rows)).collect();
        let err = check(|g, v| {
            let c = g.concat_cols(&[v[0], v[1]])?;
            let p = g.gather_rows(c, &picks)?;
            weighted_sum(g, p, seed)
        }, &params);
        prop_assert!(err <= TOL, "{err}");
    }

    #[test]
    fn backward_is_deterministic_and_single_visit(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = Graph::<f64>::new();
        let a = g.param(random(&mut r, &[3, 4], -1.0, 1.0));
        let b = g.param(random(&mut r, &[4, 2], -1.0, 1.0));
        let y = g.matmul(a, b).unwrap();
        let z = g.relu(y).unwrap();
        let w = g.mul(z, y).unwrap();
        let loss = weighted_sum(&mut g, w, seed).unwrap();
        let g1 = g.backward(loss).unwrap();
        let g2 = g.backward(loss).unwrap();
        for v in [a, b] {
            prop_assert!(g1.get(v).unwrap().bitwise_eq(g2.get(v).unwrap()));
        }
        prop_assert_eq!(g1.max_visits_per_node(), 1);
        prop_assert_eq!(g1.nodes_visited(), loss.index() + 1);
    }

    #[test]
    fn scaled_loss_scales_gradients(seed in any::<u64>(), exp in -4i32..5, negate in any::<bool>()) {
        let mut r = rng(seed);
        let c = if negate { -(2f64.powi(exp)) } else { 2f64.powi(exp) };
        let mut g = Graph::<f64>::new();
        let a = g.param(random(&mut r, &[3, 4], -1.0, 1.0));
        let b = g.param(random(&mut r, &[4, 2], -1.0, 1.0));
        let y = g.matmul(a, b).unwrap();
        let y = g.sigmoid(y).unwrap();
        let loss = weighted_sum(&mut g, y, seed).unwrap();
        let scaled = g.scale(loss, c).unwrap();
        let base = g.backward(loss).unwrap();
        let grads = g.backward(scaled).unwrap();
        for v in [a, b] {
            let want = base.get(v).unwrap().map(|x| x * c);
            prop_assert!(grads.get(v).unwrap().bitwise_eq(&want));
        }
        // a general constant is linear up to rounding
        let k = r.gen_range(-5.0..5.0);
        let scaled = g.scale(loss, k).unwrap();
        let grads = g.backward(scaled).unwrap();
        for v in [a, b] {
            for (x, y) in grads.get(v).unwrap().data().iter().zip(base.get(v).unwrap().data()) {
                prop_assert!((x - k * y).abs() <= 1e-12 * (1.0 + (k * y).abs()));
            }
        }
    }
}

#[test]
fn matmul_gradient_of_sum() {
    let mut r = rng(5);
    let params = [random(&mut r, &[3, 4], -1.0, 1.0), random(&mut r, &[4, 2], -1.0, 1.0)];
    let err = check(
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.sum(y, &[])
        },
        &params,
    );
    assert!(err <= 1e-6, "{err}");
}
