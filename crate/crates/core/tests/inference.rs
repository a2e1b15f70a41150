mod common;

use pixelnet::config::Config;
use pixelnet::data::{Split, TaskKind};
use pixelnet::infer::{
    angular_error, edge_fmeasure, miou_and_accuracy, normal_stats, predict_dense, predict_multiscale, predict_pixels,
    resize_bilinear,
};
use pixelnet::hypercolumn::PixelCoord;
use pixelnet::model::Model;
use pixelnet::tensor::Tensor;
use pixelnet::train::Trainer;
use proptest::prelude::*;
use rand::Rng;

use common::{angle_oracle, edge_curve_oracle, miou_oracle, random_unit, rng, uniform_vec};

/// A lightly trained 16×16 model, so predictions are not all alike.
fn trained(task: &str) -> (Model<f64>, Tensor<f64>) {
    let mut cfg = Config::default();
    let kind = format!("task.kind={task}");
    cfg.apply_overrides(&["task.size=16", "task.train_images=6", "sample.pixels=32", "sample.images=3", "train.iterations=5", &kind])
        .unwrap();
    let train = cfg.dataset(Split::Train).unwrap();
    let mut t = Trainer::<f64>::new(cfg.train_config().unwrap(), cfg.model_spec().unwrap()).unwrap();
    t.run(&train, None, None).unwrap();
    let image = train.images[0].cast();
    (t.model, image)
}

#[test]
fn dense_prediction_equals_per_pixel_prediction() {
    for task in ["segmentation", "normals", "edges"] {
        let (mut model, image) = trained(task);
        let dense = predict_dense(&mut model, &image, usize::MAX).unwrap();
        let pixels: Vec<PixelCoord> = (0..16).flat_map(|r| (0..16).map(move |c| PixelCoord::new(r, c))).collect();
        let single = predict_pixels(&mut model, &image, &pixels).unwrap();
        for (p, v) in pixels.iter().zip(&single) {
            let d = dense.at(p.row, p.col);
            assert!(d.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()), "{task} at {p:?}");
        }
        if let TaskKind::Segmentation { .. } = dense.task {
            for r in 0..16 {
                for c in 0..16 {
                    assert!((dense.at(r, c).iter().sum::<f64>() - 1.0).abs() <= 1e-5);
                }
            }
        }
        let d = model.spec.mlp.input_dim;
        let strips = predict_dense(&mut model, &image, 3 * 16 * d).unwrap();
        assert!(strips.bitwise_eq(&dense), "{task} strips");
    }
}

#[test]
fn multiscale_compositions() {
    let (mut model, image) = trained("segmentation");
    let dense = predict_dense(&mut model, &image, usize::MAX).unwrap();
    let one = predict_multiscale(&mut model, &image, &[1.0], usize::MAX).unwrap();
    assert!(one.bitwise_eq(&dense));

    let half = predict_multiscale(&mut model, &image, &[0.5], usize::MAX).unwrap();
    let twice = predict_multiscale(&mut model, &image, &[0.5, 0.5], usize::MAX).unwrap();
    assert!(twice.bitwise_eq(&half));

    let small = resize_bilinear(&image, 8, 8).unwrap();
    let mut up = resize_bilinear(&predict_dense(&mut model, &small, usize::MAX).unwrap().map, 16, 16).unwrap();
    let (k, hw) = (up.shape()[0], 256);
    let d = up.data_mut();
    for p in 0..hw {
        let s: f64 = (0..k).map(|c| d[c * hw + p]).sum();
        for c in 0..k {
            d[c * hw + p] /= s;
        }
    }
    assert!(half.map.bitwise_eq(&up));
    assert!(predict_multiscale(&mut model, &image, &[], usize::MAX).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn miou_matches_confusion_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = 5;
        let gt: Vec<u8> = (0..256).map(|_| if r.gen_bool(0.05) { 255 } else { r.gen_range(0..k as u8) }).collect();
        let pred: Vec<u8> = gt.iter().map(|&g| if g != 255 && r.gen_bool(0.6) { g } else { r.gen_range(0..k as u8) }).collect();
        let s = miou_and_accuracy(&pred, &gt, k, Some(255)).unwrap();
        let (miou, acc) = miou_oracle(&pred, &gt, k, Some(255));
        prop_assert_eq!(s.mean_iou, miou);
        prop_assert_eq!(s.accuracy, acc);
    }

    #[test]
    fn miou_is_relabeling_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = 4u8;
        let gt: Vec<u8> = (0..100).map(|_| r.gen_range(0..k)).collect();
        let pred: Vec<u8> = (0..100).map(|_| r.gen_range(0..k)).collect();
        let mut perm: Vec<u8> = (0..k).collect();
        for i in (1..k as usize).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let a = miou_and_accuracy(&pred, &gt, k as usize, None).unwrap();
        let relabel = |v: &[u8]| v.iter().map(|&x| perm[x as usize]).collect::<Vec<u8>>();
        let b = miou_and_accuracy(&relabel(&pred), &relabel(&gt), k as usize, None).unwrap();
        prop_assert!((a.mean_iou - b.mean_iou).abs() <= 1e-12);
    }

    #[test]
    fn normal_stats_match_oracle_and_are_ordered(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt: Vec<[f64; 3]> = (0..64).map(|_| random_unit(&mut r)).collect();
        let pred: Vec<[f64; 3]> = gt
            .iter()
            .map(|g| {
                let n = uniform_vec(&mut r, 3, -0.6, 0.6);
                [g[0] + n[0], g[1] + n[1], g[2] + n[2]]
            })
            .collect();
        for (p, g) in pred.iter().zip(&gt) {
            prop_assert!((angular_error(*p, *g) - angle_oracle(*p, *g)).abs() <= 1e-4);
        }
        let s = normal_stats(&pred, &gt, None).unwrap();
        let errs: Vec<f64> = pred.iter().zip(&gt).map(|(p, g)| angle_oracle(*p, *g)).collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        prop_assert!((s.mean - mean).abs() <= 1e-4);
        prop_assert!(s.pct_11_25 <= s.pct_22_5 && s.pct_22_5 <= s.pct_30);
    }

    #[test]
    fn edge_curve_matches_counting_oracle(seed in any::<u64>()) {
        let mut r = rng(seed);
        let gt: Vec<u8> = (0..400).map(|_| r.gen_bool(0.1) as u8).collect();
        let prob: Vec<f64> = gt.iter().map(|&g| (r.gen_range(0.0..0.7) + 0.3 * g as f64).min(1.0)).collect();
        let report = edge_fmeasure(&prob, &gt, 51).unwrap();
        let oracle = edge_curve_oracle(&prob, &gt, 51);
        prop_assert_eq!(report.curve.len(), 51);
        for (pt, (t, p, rc, f)) in report.curve.iter().zip(&oracle) {
            prop_assert_eq!(pt.threshold, *t);
            prop_assert_eq!(pt.precision, *p);
            prop_assert_eq!(pt.recall, *rc);
            prop_assert_eq!(pt.f, *f);
        }
        let best = oracle.iter().map(|o| o.3).fold(0.0, f64::max);
        prop_assert_eq!(report.best_f, best);
        for w in report.curve.windows(2) {
            prop_assert!(w[1].recall <= w[0].recall);
        }
    }
}
