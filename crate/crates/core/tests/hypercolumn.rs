mod common;

use pixelnet::autodiff::Graph;
use pixelnet::hypercolumn::{
    dense_hypercolumn, positive_quota, sample_hypercolumn, sample_pixels_biased, sample_pixels_uniform, scatter_gradient,
    PixelCoord,
};
use pixelnet::layers::{FeatureMaps, LayerMeta};
use pixelnet::tensor::Tensor;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use common::{bilinear_oracle, coords_oracle, rng, uniform_vec};

const SIZE: usize = 16;

/// Random taps at strides 1, 2, 4 and 8 over a batch of `batch` images.
fn random_maps(g: &mut Graph<f64>, r: &mut ChaCha8Rng, batch: usize) -> FeatureMaps {
    let mut maps = Vec::new();
    let mut metas = Vec::new();
    for (i, s) in [1usize, 2, 4, 8].into_iter().enumerate() {
        let ch = r.gen_range(1..4);
        let f = SIZE / s;
        let data = uniform_vec(r, batch * ch * f * f, -1.0, 1.0);
        maps.push(g.constant(Tensor::from_vec(&[batch, ch, f, f], data).unwrap()));
        metas.push(LayerMeta { name: format!("tap{i}"), channels: ch, stride_product: s });
    }
    FeatureMaps { maps, metas }
}

fn random_pixels(r: &mut ChaCha8Rng, batch: usize, n: usize) -> Vec<(usize, PixelCoord)> {
    (0..n).map(|_| (r.gen_range(0..batch), PixelCoord::new(r.gen_range(0..SIZE), r.gen_range(0..SIZE)))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampled_rows_match_four_neighbor_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = Graph::<f64>::new();
        let f = random_maps(&mut g, &mut r, 2);
        let pixels = random_pixels(&mut r, 2, 20);
        let hc = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &pixels).unwrap();
        let rows = g.value(hc.features);
        let d = rows.shape()[1];
        for (row, &(b, p)) in pixels.iter().enumerate() {
            let mut col = 0;
            for (m, meta) in f.maps.iter().zip(&f.metas) {
                let t = g.value(*m);
                let (ch, fh, fw) = (t.shape()[1], t.shape()[2], t.shape()[3]);
                let (u, v) = coords_oracle(p.row, p.col, meta.stride_product, fh, fw);
                for c in 0..ch {
                    let plane = &t.data()[(b * ch + c) * fh * fw..(b * ch + c + 1) * fh * fw];
                    let want = bilinear_oracle(plane, fh, fw, u, v);
                    let got = rows.data()[row * d + col + c];
                    prop_assert!((got - want).abs() <= 1e-6 * (1.0 + want.abs()), "{} vs {}", got, want);
                }
                col += ch;
            }
        }
    }

    #[test]
    fn weights_partition_unity_and_values_stay_in_hull(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = Graph::<f64>::new();
        let f = random_maps(&mut g, &mut r, 2);
        let pixels = random_pixels(&mut r, 2, 30);
        let hc = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &pixels).unwrap();
        let prov = &hc.provenance;
        let taps = prov.taps();
        let rows = g.value(hc.features);
        let d = prov.dim();
        for row in 0..pixels.len() {
            let mut col = 0;
            for t in 0..taps {
                let w = prov.weights[row * taps + t];
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
                let shape = &prov.tap_shapes[t];
                let plane = shape[2] * shape[3];
                let src = g.value(f.maps[t]).data();
                for c in 0..shape[1] {
                    let corners: Vec<f64> = prov.cells[row * taps + t].iter().map(|&i| src[i + c * plane]).collect();
                    let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let v = rows.data()[row * d + col + c];
                    prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
                }
                col += shape[1];
            }
        }
    }

    #[test]
    fn dense_rows_equal_single_pixel_rows(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut g = Graph::<f64>::new();
        let f = random_maps(&mut g, &mut r, 2);
        let image = r.gen_range(0..2);
        let dense = dense_hypercolumn(&mut g, &f, image, (SIZE, SIZE), usize::MAX).unwrap();
        let dense = g.value(dense.features).clone();
        let d = dense.shape()[1];
        for _ in 0..10 {
            let p = PixelCoord::new(r.gen_range(0..SIZE), r.gen_range(0..SIZE));
            let one = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &[(image, p)]).unwrap();
            let idx = p.row * SIZE + p.col;
            let a = &dense.data()[idx * d..(idx + 1) * d];
            let b = g.value(one.features).data();
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn scatter_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut r = rng(seed);
        let mut g = Graph::<f64>::new();
        let f = random_maps(&mut g, &mut r, 2);
        let pixels = random_pixels(&mut r, 2, 25);
        let hc = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &pixels).unwrap();
        let shape = g.shape(hc.features).to_vec();
        let n = shape[0] * shape[1];
        let g1 = uniform_vec(&mut r, n, -1.0, 1.0);
        let g2 = uniform_vec(&mut r, n, -1.0, 1.0);
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| alpha * a + beta * b).collect();
        let t = |v: Vec<f64>| Tensor::from_vec(&shape, v).unwrap();
        let s1 = scatter_gradient(&t(g1), &hc.provenance).unwrap();
        let s2 = scatter_gradient(&t(g2), &hc.provenance).unwrap();
        let sm = scatter_gradient(&t(mix), &hc.provenance).unwrap();
        for ((a, b), m) in s1.iter().zip(&s2).zip(&sm) {
            for ((x, y), z) in a.data().iter().zip(b.data()).zip(m.data()) {
                let want = alpha * x + beta * y;
                prop_assert!((z - want).abs() <= 1e-12 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn biased_sampler_hits_its_quota(seed in any::<u64>(), rho in 0.0f64..=1.0, n in 1usize..200, pos_frac in 0.05f64..0.95) {
        let mut r = rng(seed);
        let (h, w) = (16, 16);
        let labels: Vec<u8> = (0..h * w).map(|_| r.gen_bool(pos_frac) as u8).collect();
        let pos = labels.iter().filter(|&&l| l == 1).count();
        let quota = positive_quota(n, rho);
        prop_assume!(quota <= pos && n - quota <= h * w - pos);
        let got = sample_pixels_biased(&labels, h, w, n, rho, &mut r).unwrap();
        prop_assert_eq!(got.len(), n);
        let hits = got.iter().filter(|p| labels[p.row * w + p.col] == 1).count();
        prop_assert_eq!(hits, (rho * n as f64 - 1e-9).ceil() as usize);
        let mut uniq = got.clone();
        uniq.sort();
        uniq.dedup();
        prop_assert_eq!(uniq.len(), n);
    }
}

#[test]
fn integral_pixel_routes_unit_gradient_to_one_cell_per_tap() {
    let mut r = rng(1);
    let mut g = Graph::<f64>::new();
    let f = random_maps(&mut g, &mut r, 1);
    // stride 1 is integral everywhere; clamped corners are integral at every stride
    let hc = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &[(0, PixelCoord::new(0, 0))]).unwrap();
    let shape = g.shape(hc.features).to_vec();
    let grads = scatter_gradient(&Tensor::full(&shape, 1.0).unwrap(), &hc.provenance).unwrap();
    for (t, gt) in grads.iter().enumerate() {
        let ch = gt.shape()[1];
        let ones = gt.data().iter().filter(|&&v| v == 1.0).count();
        let zeros = gt.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(ones, ch, "tap {t}");
        assert_eq!(ones + zeros, gt.len());
    }
}

#[test]
fn shared_cells_accumulate_both_contributions() {
    let mut r = rng(2);
    let mut g = Graph::<f64>::new();
    let f = random_maps(&mut g, &mut r, 1);
    let a = PixelCoord::new(5, 6);
    let b = PixelCoord::new(5, 6);
    let one = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &[(0, a)]).unwrap();
    let two = sample_hypercolumn(&mut g, &f, (SIZE, SIZE), &[(0, a), (0, b)]).unwrap();
    let d = g.shape(one.features)[1];
    let g1 = scatter_gradient(&Tensor::full(&[1, d], 1.0).unwrap(), &one.provenance).unwrap();
    let g2 = scatter_gradient(&Tensor::full(&[2, d], 1.0).unwrap(), &two.provenance).unwrap();
    for (x, y) in g1.iter().zip(&g2) {
        assert!(x.data().iter().zip(y.data()).all(|(u, v)| 2.0 * u == *v));
    }
}

/// Inverse of the standard normal CDF at 0.99.
const Z_99: f64 = 2.326_347_874;

#[test]
fn uniform_rows_pass_chi_square() {
    let (h, w, n) = (224, 224, 2000);
    let mut counts = vec![0u64; h];
    for seed in 0..100 {
        let coords = sample_pixels_uniform(h, w, n, &mut rng(seed)).unwrap();
        let mut uniq = coords.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), n);
        for p in coords {
            counts[p.row] += 1;
        }
    }
    let expected = (100 * n) as f64 / h as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = (h - 1) as f64;
    let a = 2.0 / (9.0 * df);
    let critical = df * (1.0 - a + Z_99 * a.sqrt()).powi(3);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}
