use std::io::Write;

use rand::seq::index::sample;
use rand::Rng;

use super::PixelCoord;
use crate::data::{Dataset, Target, TaskKind};
use crate::error::{Error, Result};

/// Uniform draw of `n` distinct pixels of an `h × w` image.
pub fn sample_pixels_uniform<R: Rng + ?Sized>(h: usize, w: usize, n: usize, rng: &mut R) -> Result<Vec<PixelCoord>> {
    if n > h * w {
        return Err(Error::contract(format!("cannot draw {n} distinct pixels from {h}×{w}")));
    }
    Ok(sample(rng, h * w, n).into_iter().map(|i| PixelCoord::new(i / w, i % w)).collect())
}

/// Size of the positive quota, `⌈rho·n⌉`, robust to float noise in `rho·n`.
pub fn positive_quota(n: usize, rho: f64) -> usize {
    ((rho * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Draws `⌈rho·n⌉` pixels from the positives of `labels` (`h × w`, nonzero
/// = positive) and the rest from the negatives. A pool smaller than its
/// quota is used up and the shortfall comes from the other pool.
pub fn sample_pixels_biased<R: Rng + ?Sized>(
    labels: &[u8],
    h: usize,
    w: usize,
    n: usize,
    rho: f64,
    rng: &mut R,
) -> Result<Vec<PixelCoord>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::contract(format!("positive fraction {rho} outside [0, 1]")));
    }
    if labels.len() != h * w {
        return Err(Error::contract(format!("label map of {} pixels for {h}×{w}", labels.len())));
    }
    if n > h * w {
        return Err(Error::contract(format!("cannot draw {n} distinct pixels from {h}×{w}")));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..h * w).partition(|&i| labels[i] != 0);
    let mut want_pos = positive_quota(n, rho).min(n);
    let mut want_neg = n - want_pos;
    if want_pos > pos.len() {
        want_neg += want_pos - pos.len();
        want_pos = pos.len();
    }
    if want_neg > neg.len() {
        want_pos += want_neg - neg.len();
        want_neg = neg.len();
    }
    let mut out = Vec::with_capacity(n);
    for (pool, k) in [(&pos, want_pos), (&neg, want_neg)] {
        out.extend(sample(rng, pool.len(), k).into_iter().map(|i| PixelCoord::new(pool[i] / w, pool[i] % w)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplingStrategy {
    Uniform,
    /// Fraction of positives per image; edge tasks only.
    Biased { rho: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    /// Index of the image in the dataset.
    pub image_index: usize,
    /// Position of the image within the batch.
    pub slot: usize,
    pub coord: PixelCoord,
    pub target: Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelBatch {
    /// Dataset indices of the batch images, in slot order.
    pub images: Vec<usize>,
    pub entries: Vec<BatchEntry>,
    pub images_per_batch: usize,
    pub pixels_per_image: usize,
}

impl PixelBatch {
    /// `(slot, coord)` pairs in entry order.
    pub fn pixels(&self) -> Vec<(usize, PixelCoord)> {
        self.entries.iter().map(|e| (e.slot, e.coord)).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "image_index,row,col,target")?;
        for e in &self.entries {
            writeln!(out, "{},{},{},{}", e.image_index, e.coord.row, e.coord.col, e.target)?;
        }
        Ok(())
    }
}

/// Picks `m` distinct images and `n` distinct pixels in each.
pub fn build_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    m: usize,
    n: usize,
    strategy: SamplingStrategy,
    rng: &mut R,
) -> Result<PixelBatch> {
    if m == 0 || n == 0 {
        return Err(Error::contract("batch needs at least one image and one pixel"));
    }
    if m > dataset.len() {
        return Err(Error::contract(format!("batch of {m} images from a dataset of {}", dataset.len())));
    }
    let (h, w) = (dataset.height, dataset.width);
    if n > h * w {
        return Err(Error::contract(format!("{n} pixels per image exceeds {h}×{w}")));
    }
    if matches!(strategy, SamplingStrategy::Biased { .. }) && dataset.task != TaskKind::Edges {
        return Err(Error::config("biased sampling needs binary edge targets"));
    }
    let images = sample(rng, dataset.len(), m).into_vec();
    let mut entries = Vec::with_capacity(m * n);
    for (slot, &image_index) in images.iter().enumerate() {
        let targets = &dataset.targets[image_index];
        let coords = match strategy {
            SamplingStrategy::Uniform => sample_pixels_uniform(h, w, n, rng)?,
            SamplingStrategy::Biased { rho } => {
                let crate::data::TargetMap::Edges(labels) = targets else {
                    return Err(Error::config("biased sampling needs binary edge targets"));
                };
                sample_pixels_biased(labels, h, w, n, rho, rng)?
            }
        };
        entries.extend(coords.into_iter().map(|coord| BatchEntry {
            image_index,
            slot,
            coord,
            target: targets.at(coord.row * w + coord.col),
        }));
    }
    Ok(PixelBatch { images, entries, images_per_batch: m, pixels_per_image: n })
}
