//! Procedural datasets whose targets are recoverable from local image
//! content.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, Split, TargetMap, TaskKind, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Base RGB color of each foreground class, index 0 unused.
pub const PALETTE: [[f32; 3]; 8] = [
    [0.5, 0.5, 0.5],
    [0.9, 0.15, 0.15],
    [0.15, 0.8, 0.2],
    [0.2, 0.3, 0.95],
    [0.95, 0.9, 0.15],
    [0.85, 0.2, 0.85],
    [0.15, 0.9, 0.9],
    [1.0, 0.55, 0.05],
];

const MAX_ATTEMPTS: usize = 100;

fn image_rng(seed: u64, generator: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(generator * 2 + matches!(split, Split::Heldout) as u64);
    // 2^40 words per image keeps images independent of each other's draws.
    rng.set_word_pos((index as u128) << 40);
    rng
}

fn check_size(size: usize) -> Result<()> {
    if size < 16 || !size.is_power_of_two() {
        return Err(Error::config(format!("image size {size} must be a power of two >= 16")));
    }
    Ok(())
}

/// Pixels with a 4-neighbor holding a strictly lower value.
pub fn transition_set<V: PartialOrd + Copy>(map: &[V], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; map.len()];
    for r in 0..height {
        for c in 0..width {
            let v = map[r * width + c];
            let lower = |rr: usize, cc: usize| map[rr * width + cc] < v;
            out[r * width + c] = (r > 0 && lower(r - 1, c))
                || (r + 1 < height && lower(r + 1, c))
                || (c > 0 && lower(r, c - 1))
                || (c + 1 < width && lower(r, c + 1));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { cy: f64, cx: f64, hh: f64, hw: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
}

impl Shape {
    fn random<R: Rng>(rng: &mut R, size: usize) -> Shape {
        let s = size as f64 / 32.0;
        if rng.gen_bool(0.5) {
            let hh = rng.gen_range(4.0..9.0) * s;
            let hw = rng.gen_range(4.0..9.0) * s;
            let cy = rng.gen_range(hh..size as f64 - 1.0 - hh);
            let cx = rng.gen_range(hw..size as f64 - 1.0 - hw);
            Shape::Rect { cy, cx, hh, hw }
        } else {
            let r = rng.gen_range(4.5..9.0) * s;
            let cy = rng.gen_range(r..size as f64 - 1.0 - r);
            let cx = rng.gen_range(r..size as f64 - 1.0 - r);
            Shape::Disc { cy, cx, r }
        }
    }

    /// Signed distance from pixel center `(y, x)`, negative inside.
    fn sd(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape::Rect { cy, cx, hh, hw } => {
                let dy = (y - cy).abs() - hh;
                let dx = (x - cx).abs() - hw;
                let outside = (dy.max(0.0).powi(2) + dx.max(0.0).powi(2)).sqrt();
                outside + dy.max(dx).min(0.0)
            }
            Shape::Disc { cy, cx, r } => ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() - r,
        }
    }
}

/// Painted shapes: RGB image plus the index (1-based draw order) of the
/// topmost shape covering each pixel, 0 for background.
struct Scene {
    rgb: Vec<f32>,
    layer: Vec<u8>,
}

fn paint<R: Rng>(rng: &mut R, size: usize, shapes: &[(Shape, usize)], noise: f64) -> Scene {
    let hw = size * size;
    let mut rgb = vec![0f32; 3 * hw];
    let (fy, fx) = (rng.gen_range(0.2..0.6), rng.gen_range(0.2..0.6));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for r in 0..size {
        for c in 0..size {
            let g = 0.45 + 0.08 * (fy * r as f64 + fx * c as f64 + phase).sin();
            for ch in 0..3 {
                rgb[ch * hw + r * size + c] = g as f32;
            }
        }
    }
    let mut layer = vec![0u8; hw];
    for (z, (shape, class)) in shapes.iter().enumerate() {
        let color: Vec<f32> = PALETTE[*class].iter().map(|&v| v + rng.gen_range(-0.05f32..0.05)).collect();
        for r in 0..size {
            for c in 0..size {
                let sd = shape.sd(r as f64, c as f64);
                let alpha = (0.5 - sd).clamp(0.0, 1.0) as f32;
                if sd < 0.0 {
                    layer[r * size + c] = (z + 1) as u8;
                }
                if alpha > 0.0 {
                    for (ch, &col) in color.iter().enumerate() {
                        let v = &mut rgb[ch * hw + r * size + c];
                        *v = (1.0 - alpha) * *v + alpha * col;
                    }
                }
            }
        }
    }
    let normal = Normal::new(0.0, noise).expect("noise sigma is finite");
    for v in rgb.iter_mut() {
        *v += normal.sample(rng) as f32;
    }
    Scene { rgb, layer }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationConfig {
    pub size: usize,
    pub classes: usize,
    pub noise: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig { size: 32, classes: 4, noise: 0.05 }
    }
}

/// `classes − 1` soft-edged shapes, one per foreground class, in random
/// depth order over a textured background. The one-pixel inner rim of every
/// occluding boundary is labeled [`IGNORE_LABEL`].
pub fn gen_segmentation(seed: u64, n_images: usize, cfg: &SegmentationConfig, split: Split) -> Result<Dataset> {
    check_size(cfg.size)?;
    if cfg.classes < 2 || cfg.classes > PALETTE.len() {
        return Err(Error::config(format!("segmentation needs 2..={} classes, got {}", PALETTE.len(), cfg.classes)));
    }
    let size = cfg.size;
    let mut ds = empty(TaskKind::Segmentation { classes: cfg.classes }, split, "segmentation", seed, size);
    for i in 0..n_images {
        let mut rng = image_rng(seed, 1, split, i);
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS {
            let mut order: Vec<usize> = (1..cfg.classes).collect();
            order.shuffle(&mut rng);
            let shapes: Vec<(Shape, usize)> = order.iter().map(|&c| (Shape::random(&mut rng, size), c)).collect();
            let scene = paint(&mut rng, size, &shapes, cfg.noise);
            let band = transition_set(&scene.layer, size, size);
            let labels: Vec<u8> = scene
                .layer
                .iter()
                .zip(&band)
                .map(|(&l, &b)| if b { IGNORE_LABEL } else if l == 0 { 0 } else { shapes[l as usize - 1].1 as u8 })
                .collect();
            let visible = (1..cfg.classes).all(|k| labels.iter().filter(|&&l| l as usize == k).count() >= 4);
            if visible {
                ds.images.push(Tensor::from_vec(&[3, size, size], scene.rgb)?);
                ds.targets.push(TargetMap::Classes(labels));
                done = true;
                break;
            }
        }
        if !done {
            return Err(Error::Contract(format!("image {i}: no layout shows every class after {MAX_ATTEMPTS} attempts")));
        }
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConfig {
    pub size: usize,
    /// Desired fraction of edge pixels; sets the mean shape count.
    pub pos_rate: f64,
    pub noise: f64,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig { size: 32, pos_rate: 0.05, noise: 0.05 }
    }
}

impl EdgeConfig {
    /// Mean shapes per image: target edge pixels over the typical rim length.
    pub fn mean_shapes(&self) -> f64 {
        let rim = 4.0 * 13.0 * self.size as f64 / 32.0;
        (self.pos_rate * (self.size * self.size) as f64 / rim).max(1.0)
    }
}

/// Shapes drawn in ascending class order; the edge map is the transition
/// set of the label map.
pub fn gen_edges(seed: u64, n_images: usize, cfg: &EdgeConfig, split: Split) -> Result<Dataset> {
    check_size(cfg.size)?;
    if !(cfg.pos_rate > 0.0 && cfg.pos_rate < 1.0) {
        return Err(Error::config(format!("edge pos_rate {} outside (0, 1)", cfg.pos_rate)));
    }
    let size = cfg.size;
    let mean = cfg.mean_shapes();
    let (base, frac) = (mean.floor() as usize, mean.fract());
    let mut ds = empty(TaskKind::Edges, split, "edges", seed, size);
    let (mut positives, mut total) = (0usize, 0usize);
    for i in 0..n_images {
        let mut rng = image_rng(seed, 3, split, i);
        let count = (base + rng.gen_bool(frac) as usize).min(PALETTE.len() - 1);
        let shapes: Vec<(Shape, usize)> = (1..=count).map(|c| (Shape::random(&mut rng, size), c)).collect();
        let scene = paint(&mut rng, size, &shapes, cfg.noise);
        let edges: Vec<u8> = transition_set(&scene.layer, size, size).into_iter().map(u8::from).collect();
        positives += edges.iter().filter(|&&e| e == 1).count();
        total += edges.len();
        ds.images.push(Tensor::from_vec(&[3, size, size], scene.rgb)?);
        ds.targets.push(TargetMap::Edges(edges));
    }
    ds.positive_rate = Some(if total == 0 { 0.0 } else { positives as f64 / total as f64 });
    Ok(ds)
}

/// Smooth surface `z(x, y)` of one plane plus Gaussian bumps, with `x`
/// the column and `y` the row coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    pub plane: (f64, f64),
    /// `(amplitude, center_y, center_x, sigma)`.
    pub bumps: Vec<(f64, f64, f64, f64)>,
}

impl HeightField {
    pub fn flat() -> Self {
        HeightField { plane: (0.0, 0.0), bumps: Vec::new() }
    }

    pub fn z(&self, y: f64, x: f64) -> f64 {
        let (a, b) = self.plane;
        a * x + b * y
            + self
                .bumps
                .iter()
                .map(|&(amp, cy, cx, s)| amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp())
                .sum::<f64>()
    }

    /// `(∂z/∂x, ∂z/∂y)`.
    pub fn gradient(&self, y: f64, x: f64) -> (f64, f64) {
        let (mut gx, mut gy) = self.plane;
        for &(amp, cy, cx, s) in &self.bumps {
            let e = amp * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp();
            gx -= e * (x - cx) / (s * s);
            gy -= e * (y - cy) / (s * s);
        }
        (gx, gy)
    }

    pub fn normal(&self, y: f64, x: f64) -> [f64; 3] {
        let (gx, gy) = self.gradient(y, x);
        let n = (gx * gx + gy * gy + 1.0).sqrt();
        [-gx / n, -gy / n, 1.0 / n]
    }

    fn scaled(mut self, k: f64) -> Self {
        self.plane = (self.plane.0 * k, self.plane.1 * k);
        for b in &mut self.bumps {
            b.0 *= k;
        }
        self
    }

    fn random<R: Rng>(rng: &mut R, size: usize, max_bumps: usize, max_slope: f64) -> Self {
        let s = size as f64 / 32.0;
        let plane = (rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4));
        let n = rng.gen_range(1..=max_bumps);
        let bumps = (0..n)
            .map(|_| {
                let sigma = rng.gen_range(3.0..8.0) * s;
                let amp = rng.gen_range(-1.0..1.0) * sigma;
                (amp, rng.gen_range(0.0..size as f64), rng.gen_range(0.0..size as f64), sigma)
            })
            .collect();
        let field = HeightField { plane, bumps };
        let mut steepest = 0f64;
        for r in 0..size {
            for c in 0..size {
                let (gx, gy) = field.gradient(r as f64, c as f64);
                steepest = steepest.max(gx.hypot(gy));
            }
        }
        if steepest > max_slope {
            field.scaled(max_slope / steepest)
        } else {
            field
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalsConfig {
    pub size: usize,
    pub max_bumps: usize,
    pub noise: f64,
    /// Largest surface tilt in degrees; keeps every light in front of the surface.
    pub max_tilt_deg: f64,
}

impl Default for NormalsConfig {
    fn default() -> Self {
        NormalsConfig { size: 32, max_bumps: 5, noise: 0.01, max_tilt_deg: 55.0 }
    }
}

/// Unit directions of the three lights, 30° off the viewing axis.
pub fn lights() -> [[f64; 3]; 3] {
    let tilt = 30f64.to_radians();
    [0.0f64, 120.0, 240.0].map(|az| {
        let az = az.to_radians();
        [tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos()]
    })
}

/// Renders `field` as three Lambertian channels and returns them with the
/// per-pixel unit normals.
pub fn render_field<R: Rng>(field: &HeightField, size: usize, noise: f64, rng: &mut R) -> Result<(Tensor<f32>, Vec<[f32; 3]>)> {
    let hw = size * size;
    let ls = lights();
    let mut rgb = vec![0f32; 3 * hw];
    let mut normals = Vec::with_capacity(hw);
    let gauss = Normal::new(0.0, noise).map_err(|e| Error::Domain(format!("noise: {e}")))?;
    for r in 0..size {
        for c in 0..size {
            let n = field.normal(r as f64, c as f64);
            for (k, l) in ls.iter().enumerate() {
                let shade = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]).max(0.0);
                rgb[k * hw + r * size + c] = (shade + gauss.sample(rng)) as f32;
            }
            normals.push(n.map(|v| v as f32));
        }
    }
    Ok((Tensor::from_vec(&[3, size, size], rgb)?, normals))
}

/// The height field behind image `index` of a normals dataset.
pub fn normals_field(seed: u64, index: usize, cfg: &NormalsConfig, split: Split) -> HeightField {
    let mut rng = image_rng(seed, 2, split, index);
    HeightField::random(&mut rng, cfg.size, cfg.max_bumps, cfg.max_tilt_deg.to_radians().tan())
}

pub fn gen_normals(seed: u64, n_images: usize, cfg: &NormalsConfig, split: Split) -> Result<Dataset> {
    check_size(cfg.size)?;
    if cfg.max_bumps == 0 || cfg.max_bumps > 7 {
        return Err(Error::config(format!("max_bumps {} outside 1..=7", cfg.max_bumps)));
    }
    let size = cfg.size;
    let mut ds = empty(TaskKind::Normals, split, "normals", seed, size);
    for i in 0..n_images {
        let mut rng = image_rng(seed, 2, split, i);
        let field = HeightField::random(&mut rng, size, cfg.max_bumps, cfg.max_tilt_deg.to_radians().tan());
        let (img, normals) = render_field(&field, size, cfg.noise, &mut rng)?;
        ds.images.push(img);
        ds.targets.push(TargetMap::Normals(normals));
    }
    Ok(ds)
}

fn empty(task: TaskKind, split: Split, generator: &str, seed: u64, size: usize) -> Dataset {
    Dataset {
        task,
        split,
        generator: generator.into(),
        seed,
        height: size,
        width: size,
        channels: 3,
        images: Vec::new(),
        targets: Vec::new(),
        positive_rate: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_of_centered_square() {
        let size = 8;
        let mut map = vec![0u8; 64];
        for r in 2..6 {
            for c in 2..6 {
                map[r * size + c] = 1;
            }
        }
        let t = transition_set(&map, size, size);
        for r in 0..size {
            for c in 0..size {
                let ring = (2..6).contains(&r) && (2..6).contains(&c) && (r == 2 || r == 5 || c == 2 || c == 5);
                assert_eq!(t[r * size + c], ring, "({r},{c})");
            }
        }
    }

    #[test]
    fn constant_map_has_no_transitions() {
        assert!(transition_set(&[3u8; 16], 4, 4).iter().all(|&b| !b));
    }

    #[test]
    fn plane_normal() {
        let f = HeightField { plane: (1.0, 0.0), bumps: Vec::new() };
        let n = f.normal(3.0, 4.0);
        let s = 0.5f64.sqrt();
        assert!((n[0] + s).abs() < 1e-12 && n[1].abs() < 1e-12 && (n[2] - s).abs() < 1e-12);
        assert_eq!(HeightField::flat().normal(1.0, 2.0), [0.0, 0.0, 1.0]);
    }
}
