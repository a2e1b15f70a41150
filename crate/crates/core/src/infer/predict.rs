use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::{angular_error, stats_from_errors, Confusion, EdgeCounts, EdgeReport, NormalStats, SegScores};
use crate::autodiff::{Graph, Var};
use crate::data::{Dataset, TargetMap, TaskKind, IGNORE_LABEL};
use crate::error::{Error, Result};
use crate::hypercolumn::{dense_hypercolumn, sample_hypercolumn, PixelCoord};
use crate::layers::Mode;
use crate::model::Model;
use crate::tensor::{Scalar, Tensor};

/// Default cap on dense hypercolumn scalars before falling back to strips.
pub const DEFAULT_BUDGET: usize = 1 << 24;

/// Activated per-pixel outputs `[K×H×W]`: class probabilities, unit
/// normals or edge probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMap {
    pub task: TaskKind,
    pub map: Tensor<f64>,
}

impl PredictionMap {
    pub fn height(&self) -> usize {
        self.map.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.map.shape()[2]
    }

    /// Output vector at pixel `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> Vec<f64> {
        let (k, h, w) = (self.map.shape()[0], self.height(), self.width());
        (0..k).map(|c| self.map.data()[(c * h + row) * w + col]).collect()
    }

    /// Most probable class per pixel, lowest index on ties.
    pub fn argmax(&self) -> Vec<u8> {
        let (k, hw) = (self.map.shape()[0], self.height() * self.width());
        let d = self.map.data();
        (0..hw)
            .map(|p| {
                let mut best = 0;
                for c in 1..k {
                    if d[c * hw + p] > d[best * hw + p] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }

    pub fn bitwise_eq(&self, other: &PredictionMap) -> bool {
        self.task == other.task && self.map.bitwise_eq(&other.map)
    }
}

/// Applies the task's output nonlinearity to one row of raw outputs.
fn activate(task: TaskKind, row: &[f64]) -> Vec<f64> {
    match task {
        TaskKind::Segmentation { .. } => {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        }
        TaskKind::Normals => normalize(row),
        TaskKind::Edges => row
            .iter()
            .map(|&z| if z >= 0.0 { 1.0 / (1.0 + (-z).exp()) } else { z.exp() / (1.0 + z.exp()) })
            .collect(),
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

fn eval_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn run_mlp<T: Scalar>(model: &mut Model<T>, g: &mut Graph<T>, bound: &crate::params::Bound, rows: Var) -> Result<Vec<f64>> {
    let out = model.spec.mlp.forward(g, &mut model.params, bound, rows, Mode::Eval, &mut eval_rng())?;
    Ok(g.value(out).to_f64_vec())
}

/// Eval-mode prediction at every pixel of a `[C×H×W]` image. When the
/// dense hypercolumn exceeds `budget` scalars the image is processed in row
/// strips through the same sampling path.
pub fn predict_dense<T: Scalar>(model: &mut Model<T>, image: &Tensor<T>, budget: usize) -> Result<PredictionMap> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected a [C×H×W] image, got {:?}", image.shape())));
    };
    let task = model.spec.task;
    let k = task.outputs();
    let d = model.spec.mlp.input_dim;
    let mut g = Graph::new();
    let bound = model.params.bind_frozen(&mut g);
    let fmaps = model.features(&mut g, &bound, image.clone().reshape(&[1, c, h, w])?, Mode::Eval)?;
    let mut raw = Vec::with_capacity(h * w * k);
    if h * w * d <= budget {
        let hc = dense_hypercolumn(&mut g, &fmaps, 0, (h, w), budget)?;
        raw = run_mlp(model, &mut g, &bound, hc.features)?;
    } else {
        if w * d > budget {
            return Err(Error::Resource { what: "one image row of hypercolumns".into(), required: w * d, budget });
        }
        let rows_per_strip = budget / (w * d);
        let mark = g.len();
        for r0 in (0..h).step_by(rows_per_strip) {
            let r1 = (r0 + rows_per_strip).min(h);
            let pixels: Vec<(usize, PixelCoord)> =
                (r0..r1).flat_map(|r| (0..w).map(move |cc| (0, PixelCoord::new(r, cc)))).collect();
            let hc = sample_hypercolumn(&mut g, &fmaps, (h, w), &pixels)?;
            raw.extend(run_mlp(model, &mut g, &bound, hc.features)?);
            g.truncate(mark);
        }
    }
    let mut map = vec![0.0; k * h * w];
    for p in 0..h * w {
        for (ch, v) in activate(task, &raw[p * k..(p + 1) * k]).into_iter().enumerate() {
            map[ch * h * w + p] = v;
        }
    }
    Ok(PredictionMap { task, map: Tensor::from_vec(&[k, h, w], map)? })
}

/// Eval-mode predictions at selected pixels only, one activated vector each.
pub fn predict_pixels<T: Scalar>(model: &mut Model<T>, image: &Tensor<T>, pixels: &[PixelCoord]) -> Result<Vec<Vec<f64>>> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected a [C×H×W] image, got {:?}", image.shape())));
    };
    let task = model.spec.task;
    let k = task.outputs();
    let mut g = Graph::new();
    let bound = model.params.bind_frozen(&mut g);
    let fmaps = model.features(&mut g, &bound, image.clone().reshape(&[1, c, h, w])?, Mode::Eval)?;
    let list: Vec<(usize, PixelCoord)> = pixels.iter().map(|&p| (0, p)).collect();
    let hc = sample_hypercolumn(&mut g, &fmaps, (h, w), &list)?;
    let raw = run_mlp(model, &mut g, &bound, hc.features)?;
    Ok(raw.chunks_exact(k).map(|r| activate(task, r)).collect())
}

/// Bilinear resize of `[C×H×W]` with the pixel-center convention and
/// clamped borders.
pub fn resize_bilinear<T: Scalar>(src: &Tensor<T>, nh: usize, nw: usize) -> Result<Tensor<T>> {
    let [c, h, w] = *src.shape() else {
        return Err(Error::shape(format!("resize expects [C×H×W], got {:?}", src.shape())));
    };
    if nh == 0 || nw == 0 {
        return Err(Error::shape("resize to an empty image"));
    }
    let axis = |n: usize, size: usize, i: usize| {
        let u = ((i as f64 + 0.5) * size as f64 / n as f64 - 0.5).clamp(0.0, (size - 1) as f64);
        let i0 = u.floor() as usize;
        (i0, (i0 + 1).min(size - 1), T::from_f64(u - i0 as f64))
    };
    let rows: Vec<_> = (0..nh).map(|i| axis(nh, h, i)).collect();
    let cols: Vec<_> = (0..nw).map(|j| axis(nw, w, j)).collect();
    let d = src.data();
    let mut out = Vec::with_capacity(c * nh * nw);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, a) in &rows {
            for &(x0, x1, b) in &cols {
                let top = plane[y0 * w + x0] + b * (plane[y0 * w + x1] - plane[y0 * w + x0]);
                let bot = plane[y1 * w + x0] + b * (plane[y1 * w + x1] - plane[y1 * w + x0]);
                out.push(top + a * (bot - top));
            }
        }
    }
    Tensor::from_vec(&[c, nh, nw], out)
}

/// `size·scale` rounded to the nearest positive multiple of `stride`.
pub fn scaled_extent(size: usize, scale: f64, stride: usize) -> usize {
    let units = (size as f64 * scale / stride as f64).round().max(1.0);
    units as usize * stride
}

/// Averages predictions over rescaled copies of `image`.
pub fn predict_multiscale<T: Scalar>(
    model: &mut Model<T>,
    image: &Tensor<T>,
    scales: &[f64],
    budget: usize,
) -> Result<PredictionMap> {
    if scales.is_empty() {
        return Err(Error::contract("empty scale list"));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::contract(format!("scale {s} must be positive")));
    }
    let [_, h, w] = *image.shape() else {
        return Err(Error::shape(format!("expected a [C×H×W] image, got {:?}", image.shape())));
    };
    let stride = model.spec.backbone.max_stride();
    let task = model.spec.task;
    let mut acc: Option<Tensor<f64>> = None;
    let mut resampled = false;
    for &s in scales {
        let (nh, nw) = (scaled_extent(h, s, stride), scaled_extent(w, s, stride));
        let map = if (nh, nw) == (h, w) {
            predict_dense(model, image, budget)?.map
        } else {
            resampled = true;
            let small = resize_bilinear(image, nh, nw)?;
            resize_bilinear(&predict_dense(model, &small, budget)?.map, h, w)?
        };
        match acc.as_mut() {
            None => acc = Some(map),
            Some(a) => a.add_assign(&map)?,
        }
    }
    let mut map = acc.expect("at least one scale");
    if scales.len() > 1 {
        let n = scales.len() as f64;
        map = map.map(|v| v / n);
    }
    if resampled || scales.len() > 1 {
        renormalize(task, &mut map);
    }
    Ok(PredictionMap { task, map })
}

/// Projects averaged maps back onto their valid set.
fn renormalize(task: TaskKind, map: &mut Tensor<f64>) {
    let (k, hw) = (map.shape()[0], map.shape()[1] * map.shape()[2]);
    let d = map.data_mut();
    match task {
        TaskKind::Segmentation { .. } => {
            for p in 0..hw {
                let s: f64 = (0..k).map(|c| d[c * hw + p]).sum();
                for c in 0..k {
                    d[c * hw + p] /= s;
                }
            }
        }
        TaskKind::Normals => {
            for p in 0..hw {
                let n = (0..k).map(|c| d[c * hw + p].powi(2)).sum::<f64>().sqrt();
                if n > 0.0 {
                    for c in 0..k {
                        d[c * hw + p] /= n;
                    }
                }
            }
        }
        TaskKind::Edges => {
            for v in d.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalReport {
    Segmentation(SegScores),
    Normals(NormalStats),
    Edges(EdgeReport),
}

impl EvalReport {
    /// Headline number, larger is better.
    pub fn score(&self) -> f64 {
        match self {
            EvalReport::Segmentation(s) => s.mean_iou,
            EvalReport::Normals(s) => -s.mean,
            EvalReport::Edges(e) => e.best_f,
        }
    }

    /// Named metric columns.
    pub fn columns(&self) -> Vec<(&'static str, f64)> {
        match self {
            EvalReport::Segmentation(s) => vec![("mean_iou", s.mean_iou), ("accuracy", s.accuracy)],
            EvalReport::Normals(s) => vec![
                ("mean", s.mean),
                ("median", s.median),
                ("rmse", s.rmse),
                ("pct_11_25", s.pct_11_25),
                ("pct_22_5", s.pct_22_5),
                ("pct_30", s.pct_30),
            ],
            EvalReport::Edges(e) => vec![("best_f", e.best_f), ("best_threshold", e.best_threshold)],
        }
    }
}

/// Number of thresholds in the edge precision-recall sweep.
pub const EDGE_THRESHOLDS: usize = 51;

/// Scores `model` on every image of `dataset`, pooling counts dataset-wide.
pub fn evaluate<T: Scalar>(model: &mut Model<T>, dataset: &Dataset, scales: &[f64], budget: usize) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    if dataset.task != model.spec.task {
        return Err(Error::config(format!("model is for {}, dataset is {}", model.spec.task.name(), dataset.task.name())));
    }
    let mut confusion = Confusion::new(dataset.task.outputs());
    let mut errors = Vec::new();
    let mut edges = EdgeCounts::new(EDGE_THRESHOLDS)?;
    for (img, target) in dataset.images.iter().zip(&dataset.targets) {
        let pred = predict_multiscale(model, &img.cast::<T>(), scales, budget)?;
        match target {
            TargetMap::Classes(gt) => confusion.add(&pred.argmax(), gt, Some(IGNORE_LABEL))?,
            TargetMap::Normals(gt) => {
                let hw = gt.len();
                let d = pred.map.data();
                errors.extend(gt.iter().enumerate().map(|(p, n)| {
                    angular_error([d[p], d[hw + p], d[2 * hw + p]], n.map(f64::from))
                }));
            }
            TargetMap::Edges(gt) => edges.add(pred.map.data(), gt)?,
        }
    }
    Ok(match dataset.task {
        TaskKind::Segmentation { .. } => EvalReport::Segmentation(confusion.scores()?),
        TaskKind::Normals => EvalReport::Normals(stats_from_errors(errors)?),
        TaskKind::Edges => EvalReport::Edges(edges.report()),
    })
}
