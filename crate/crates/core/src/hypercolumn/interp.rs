use std::rc::Rc;

use crate::autodiff::{BackwardRule, Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{FeatureMaps, LayerMeta};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelCoord {
    pub row: usize,
    pub col: usize,
}

impl PixelCoord {
    pub fn new(row: usize, col: usize) -> Self {
        PixelCoord { row, col }
    }
}

/// Fractional feature-map position of pixel `p` on a map of `fh × fw`
/// cells at stride `s`: `(p + 0.5)/s − 0.5`, clamped to the map.
pub fn feature_coords(p: PixelCoord, meta: &LayerMeta, fh: usize, fw: usize) -> (f64, f64) {
    let s = meta.stride_product as f64;
    let u = (p.row as f64 + 0.5) / s - 0.5;
    let v = (p.col as f64 + 0.5) / s - 0.5;
    (u.clamp(0.0, (fh - 1) as f64), v.clamp(0.0, (fw - 1) as f64))
}

/// Source cells and weights for every `(row, tap)` of a sampled matrix.
///
/// Cell indices are flat offsets of channel 0 inside the tap tensor
/// `[B×C×Hᵢ×Wᵢ]`; channel `c` adds `c·Hᵢ·Wᵢ`. Corners are ordered
/// `(y0,x0), (y0,x1), (y1,x0), (y1,x1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance<T> {
    pub rows: usize,
    pub tap_shapes: Vec<Vec<usize>>,
    pub cells: Vec<[usize; 4]>,
    pub weights: Vec<[T; 4]>,
}

impl<T: Scalar> Provenance<T> {
    pub fn taps(&self) -> usize {
        self.tap_shapes.len()
    }

    /// Hypercolumn width.
    pub fn dim(&self) -> usize {
        self.tap_shapes.iter().map(|s| s[1]).sum()
    }

    /// Scalars held: four indices and four weights per `(row, tap)`.
    pub fn scalars(&self) -> usize {
        8 * self.cells.len()
    }
}

/// Sampled hypercolumn rows and the bookkeeping needed to route gradients
/// back to the feature maps.
#[derive(Debug, Clone)]
pub struct Hypercolumn<T> {
    pub features: Var,
    pub provenance: Rc<Provenance<T>>,
}

struct SampleRule<T> {
    provenance: Rc<Provenance<T>>,
}

impl<T: Scalar> BackwardRule<T> for SampleRule<T> {
    fn name(&self) -> &'static str {
        "sample_hypercolumn"
    }

    fn backward(&self, _inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(scatter_gradient(grad, &self.provenance)?.into_iter().map(Some).collect())
    }

    fn saved_scalars(&self) -> usize {
        self.provenance.scalars()
    }
}

/// Distributes row gradients `[rows × D]` onto the tap maps.
pub fn scatter_gradient<T: Scalar>(grad: &Tensor<T>, prov: &Provenance<T>) -> Result<Vec<Tensor<T>>> {
    let d = prov.dim();
    if grad.shape() != [prov.rows, d] || prov.cells.len() != prov.rows * prov.taps() {
        return Err(Error::contract(format!(
            "gradient {:?} does not match provenance of {} rows × {d}",
            grad.shape(),
            prov.rows
        )));
    }
    let mut out: Vec<Tensor<T>> = prov.tap_shapes.iter().map(|s| Tensor::zeros(s)).collect::<Result<_>>()?;
    let g = grad.data();
    for r in 0..prov.rows {
        let mut offset = 0;
        for (t, map) in out.iter_mut().enumerate() {
            let shape = &prov.tap_shapes[t];
            let (ch, plane) = (shape[1], shape[2] * shape[3]);
            let cells = prov.cells[r * prov.taps() + t];
            let w = prov.weights[r * prov.taps() + t];
            let dst = map.data_mut();
            for c in 0..ch {
                let gv = g[r * d + offset + c];
                for k in 0..4 {
                    let i = cells[k] + c * plane;
                    dst[i] = dst[i] + w[k] * gv;
                }
            }
            offset += ch;
        }
    }
    Ok(out)
}

/// Bilinear corners and weights of one pixel on one tap.
fn corners<T: Scalar>(p: PixelCoord, image: usize, meta: &LayerMeta, shape: &[usize]) -> ([usize; 4], [T; 4], T, T) {
    let (ch, fh, fw) = (shape[1], shape[2], shape[3]);
    let (u, v) = feature_coords(p, meta, fh, fw);
    let (y0, x0) = (u.floor() as usize, v.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(fh - 1), (x0 + 1).min(fw - 1));
    let (a, b) = (u - y0 as f64, v - x0 as f64);
    let base = image * ch * fh * fw;
    let cells = [base + y0 * fw + x0, base + y0 * fw + x1, base + y1 * fw + x0, base + y1 * fw + x1];
    let weights = [(1.0 - a) * (1.0 - b), (1.0 - a) * b, a * (1.0 - b), a * b].map(T::from_f64);
    (cells, weights, T::from_f64(a), T::from_f64(b))
}

/// Interpolates between the four corners. The nested lerp is exact on
/// constant neighborhoods and clamped to the corner range.
#[inline]
fn blend<T: Scalar>(f: [T; 4], a: T, b: T) -> T {
    let lerp = |p: T, q: T, t: T| {
        let v = p + t * (q - p);
        v.max(p.min(q)).min(p.max(q))
    };
    lerp(lerp(f[0], f[1], b), lerp(f[2], f[3], b), a)
}

/// Hypercolumn rows for `pixels`, each `(batch image, coord)`, on images of
/// `image_size = (H, W)`.
pub fn sample_hypercolumn<T: Scalar>(
    graph: &mut Graph<T>,
    fmaps: &FeatureMaps,
    image_size: (usize, usize),
    pixels: &[(usize, PixelCoord)],
) -> Result<Hypercolumn<T>> {
    if pixels.is_empty() {
        return Err(Error::contract("sample_hypercolumn with no pixels"));
    }
    if fmaps.maps.len() != fmaps.metas.len() || fmaps.maps.is_empty() {
        return Err(Error::contract("feature maps and metadata disagree"));
    }
    let (h, w) = image_size;
    let tap_shapes: Vec<Vec<usize>> = fmaps.maps.iter().map(|&m| graph.shape(m).to_vec()).collect();
    let batch = tap_shapes[0][0];
    for (shape, meta) in tap_shapes.iter().zip(&fmaps.metas) {
        if shape.len() != 4 || shape[0] != batch || shape[2] * meta.stride_product != h || shape[3] * meta.stride_product != w {
            return Err(Error::contract(format!(
                "tap {} of shape {shape:?} does not cover a {h}×{w} image at stride {}",
                meta.name, meta.stride_product
            )));
        }
    }
    if let Some(&(b, p)) = pixels.iter().find(|(b, p)| *b >= batch || p.row >= h || p.col >= w) {
        return Err(Error::contract(format!("pixel {p:?} of image {b} outside {batch} images of {h}×{w}")));
    }
    let taps = tap_shapes.len();
    let d: usize = tap_shapes.iter().map(|s| s[1]).sum();
    let mut out = vec![T::zero(); pixels.len() * d];
    let mut cells = Vec::with_capacity(pixels.len() * taps);
    let mut weights = Vec::with_capacity(pixels.len() * taps);
    let datas: Vec<&[T]> = fmaps.maps.iter().map(|&m| graph.value(m).data()).collect();
    for (r, &(b, p)) in pixels.iter().enumerate() {
        let mut offset = 0;
        for t in 0..taps {
            let shape = &tap_shapes[t];
            let (ch, plane) = (shape[1], shape[2] * shape[3]);
            let (cs, ws, a, bb) = corners::<T>(p, b, &fmaps.metas[t], shape);
            let src = datas[t];
            let row = &mut out[r * d + offset..r * d + offset + ch];
            for (c, v) in row.iter_mut().enumerate() {
                let k = c * plane;
                *v = blend([src[cs[0] + k], src[cs[1] + k], src[cs[2] + k], src[cs[3] + k]], a, bb);
            }
            cells.push(cs);
            weights.push(ws);
            offset += ch;
        }
    }
    let provenance = Rc::new(Provenance { rows: pixels.len(), tap_shapes, cells, weights });
    let value = Tensor::from_vec(&[pixels.len(), d], out)?;
    let features = graph.record(fmaps.maps.clone(), value, Box::new(SampleRule { provenance: provenance.clone() }))?;
    Ok(Hypercolumn { features, provenance })
}

/// All pixels of batch image `image` in row-major order, through the same
/// path as [`sample_hypercolumn`]. `budget` caps the `H·W·D` matrix.
pub fn dense_hypercolumn<T: Scalar>(
    graph: &mut Graph<T>,
    fmaps: &FeatureMaps,
    image: usize,
    image_size: (usize, usize),
    budget: usize,
) -> Result<Hypercolumn<T>> {
    let (h, w) = image_size;
    let d: usize = fmaps.metas.iter().map(|m| m.channels).sum();
    let required = h * w * d;
    if required > budget {
        return Err(Error::Resource { what: "dense hypercolumn".into(), required, budget });
    }
    let pixels: Vec<(usize, PixelCoord)> =
        (0..h).flat_map(|r| (0..w).map(move |c| (image, PixelCoord::new(r, c)))).collect();
    sample_hypercolumn(graph, fmaps, image_size, &pixels)
}
