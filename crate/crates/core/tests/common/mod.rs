//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

/// Six nested loops over batch, output channel, output row/col, input
/// channel and kernel offsets; zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_oracle(
    x: &[f64],
    [b, c, h, w]: [usize; 4],
    k: &[f64],
    [o, _, kh, kw]: [usize; 4],
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; b * o * oh * ow];
    for n in 0..b {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let r = (i * stride + di) as isize - pad as isize;
                                let s = (j * stride + dj) as isize - pad as isize;
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let xv = x[((n * c + ic) * h + r as usize) * w + s as usize];
                                acc += xv * k[((oc * c + ic) * kh + di) * kw + dj];
                            }
                        }
                    }
                    out[((n * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, [b, o, oh, ow])
}

/// Value at fractional `(u, v)` of an `fh × fw` plane from its four
/// surrounding cells.
pub fn bilinear_oracle(plane: &[f64], fh: usize, fw: usize, u: f64, v: f64) -> f64 {
    let y0 = u.floor() as usize;
    let x0 = v.floor() as usize;
    let y1 = (y0 + 1).min(fh - 1);
    let x1 = (x0 + 1).min(fw - 1);
    let (dy, dx) = (u - y0 as f64, v - x0 as f64);
    let at = |y: usize, x: usize| plane[y * fw + x];
    at(y0, x0) * (1.0 - dy) * (1.0 - dx) + at(y0, x1) * (1.0 - dy) * dx + at(y1, x0) * dy * (1.0 - dx) + at(y1, x1) * dy * dx
}

/// Feature position of pixel `(r, c)` at stride `s`, clamped to the map.
pub fn coords_oracle(r: usize, c: usize, s: usize, fh: usize, fw: usize) -> (f64, f64) {
    let u = ((r as f64 + 0.5) / s as f64 - 0.5).max(0.0).min((fh - 1) as f64);
    let v = ((c as f64 + 0.5) / s as f64 - 0.5).max(0.0).min((fw - 1) as f64);
    (u, v)
}

/// Mean negative log softmax probability of the labeled class, straight
/// from the definition.
pub fn softmax_xent_oracle(logits: &[f64], k: usize, labels: &[u8], ignore: Option<u8>) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (r, &l) in labels.iter().enumerate() {
        if Some(l) == ignore {
            continue;
        }
        let row = &logits[r * k..(r + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[l as usize].exp() / z).ln();
        n += 1;
    }
    total / n as f64
}

/// `½·mean(−ln σ(z)) over positives + ½·mean(−ln(1−σ(z))) over negatives`.
pub fn balanced_bce_oracle(logits: &[f64], labels: &[u8]) -> f64 {
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let (mut lp, mut np, mut ln, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (&z, &l) in logits.iter().zip(labels) {
        if l == 1 {
            lp += -sig(z).ln();
            np += 1;
        } else {
            ln += -(1.0 - sig(z)).ln();
            nn += 1;
        }
    }
    let mp = if np > 0 { lp / np as f64 } else { 0.0 };
    let mn = if nn > 0 { ln / nn as f64 } else { 0.0 };
    0.5 * (mp + mn)
}

/// Mean IoU over classes appearing in either map, and mean recall over
/// classes appearing in the ground truth, by direct enumeration.
pub fn miou_oracle(pred: &[u8], gt: &[u8], k: usize, ignore: Option<u8>) -> (f64, f64) {
    let mut ious = Vec::new();
    let mut recalls = Vec::new();
    for c in 0..k as u8 {
        let (mut inter, mut union, mut in_gt) = (0u64, 0u64, 0u64);
        for (&p, &g) in pred.iter().zip(gt) {
            if Some(g) == ignore {
                continue;
            }
            if p == c && g == c {
                inter += 1;
            }
            if p == c || g == c {
                union += 1;
            }
            if g == c {
                in_gt += 1;
            }
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
        if in_gt > 0 {
            recalls.push(inter as f64 / in_gt as f64);
        }
    }
    (ious.iter().sum::<f64>() / ious.len() as f64, recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Precision, recall and F at each of `t` evenly spaced thresholds, where
/// a pixel is predicted positive when `prob ≥ threshold`.
pub fn edge_curve_oracle(prob: &[f64], gt: &[u8], t: usize) -> Vec<(f64, f64, f64, f64)> {
    let positives = gt.iter().filter(|&&g| g != 0).count() as f64;
    (0..t)
        .map(|i| {
            let th = i as f64 / (t - 1) as f64;
            let mut tp = 0.0;
            let mut fp = 0.0;
            for (&p, &g) in prob.iter().zip(gt) {
                if p >= th {
                    if g != 0 {
                        tp += 1.0;
                    } else {
                        fp += 1.0;
                    }
                }
            }
            let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
            let recall = if positives == 0.0 { 0.0 } else { tp / positives };
            let f = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            (th, precision, recall, f)
        })
        .collect()
}

/// Angle in degrees between two vectors, both normalized here.
pub fn angle_oracle(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    let c = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
    c.clamp(-1.0, 1.0).acos() * 180.0 / std::f64::consts::PI
}

/// Pixels with a 4-neighbor holding a strictly lower value, recomputed by
/// listing each pixel's neighbors.
pub fn transition_oracle(map: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let v = map[r as usize * w + c as usize];
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize && map[rr as usize * w + cc as usize] < v {
                    out[r as usize * w + c as usize] = true;
                }
            }
        }
    }
    out
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let n: f64 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}
