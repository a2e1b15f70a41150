use crate::error::{Error, Result};

/// Confusion counts accumulated over any number of label maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub classes: usize,
    /// `counts[gt * classes + pred]`.
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegScores {
    pub mean_iou: f64,
    /// `None` for classes absent from both maps.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean recall over classes present in the ground truth.
    pub accuracy: f64,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, pred: &[u8], gt: &[u8], ignore: Option<u8>) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::shape(format!("prediction of {} pixels vs ground truth of {}", pred.len(), gt.len())));
        }
        for (&p, &g) in pred.iter().zip(gt) {
            if Some(g) == ignore {
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.classes || g >= self.classes {
                return Err(Error::contract(format!("label {} outside {} classes", p.max(g), self.classes)));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn scores(&self) -> Result<SegScores> {
        if self.total() == 0 {
            return Err(Error::contract("no labeled pixels to score"));
        }
        let k = self.classes;
        let mut per_class = Vec::with_capacity(k);
        let mut recalls = Vec::new();
        for c in 0..k {
            let tp = self.counts[c * k + c];
            let gt: u64 = self.counts[c * k..(c + 1) * k].iter().sum();
            let pred: u64 = (0..k).map(|g| self.counts[g * k + c]).sum();
            let union = gt + pred - tp;
            per_class.push((union > 0).then(|| tp as f64 / union as f64));
            if gt > 0 {
                recalls.push(tp as f64 / gt as f64);
            }
        }
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok(SegScores {
            mean_iou: present.iter().sum::<f64>() / present.len() as f64,
            per_class_iou: per_class,
            accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        })
    }
}

pub fn miou_and_accuracy(pred: &[u8], gt: &[u8], classes: usize, ignore: Option<u8>) -> Result<SegScores> {
    let mut c = Confusion::new(classes);
    c.add(pred, gt, ignore)?;
    c.scores()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalStats {
    pub mean: f64,
    pub median: f64,
    pub rmse: f64,
    pub pct_11_25: f64,
    pub pct_22_5: f64,
    pub pct_30: f64,
}

/// Angle in degrees between `pred` (any length) and unit `gt`; a zero
/// prediction counts as 90°.
pub fn angular_error(pred: [f64; 3], gt: [f64; 3]) -> f64 {
    let norm = (pred[0] * pred[0] + pred[1] * pred[1] + pred[2] * pred[2]).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return 90.0;
    }
    let dot = (pred[0] * gt[0] + pred[1] * gt[1] + pred[2] * gt[2]) / norm;
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Summary of per-pixel angular errors.
pub fn stats_from_errors(mut errors: Vec<f64>) -> Result<NormalStats> {
    if errors.is_empty() {
        return Err(Error::contract("no pixels to score"));
    }
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let frac = |t: f64| errors.iter().filter(|&&e| e < t).count() as f64 / n;
    let (p1, p2, p3) = (frac(11.25), frac(22.5), frac(30.0));
    let mid = (errors.len() - 1) / 2;
    let (_, median, _) = errors.select_nth_unstable_by(mid, f64::total_cmp);
    Ok(NormalStats { mean, median: *median, rmse, pct_11_25: p1, pct_22_5: p2, pct_30: p3 })
}

pub fn normal_stats(pred: &[[f64; 3]], gt: &[[f64; 3]], mask: Option<&[bool]>) -> Result<NormalStats> {
    if pred.len() != gt.len() || mask.is_some_and(|m| m.len() != gt.len()) {
        return Err(Error::shape("normal maps and mask differ in size"));
    }
    let errors = (0..gt.len())
        .filter(|&i| mask.map_or(true, |m| m[i]))
        .map(|i| angular_error(pred[i], gt[i]))
        .collect();
    stats_from_errors(errors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeReport {
    pub best_f: f64,
    pub best_threshold: f64,
    pub curve: Vec<PrPoint>,
    /// Ground truth had no positives, so recall is undefined.
    pub degenerate: bool,
}

/// Per-threshold counts accumulated over any number of maps.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCounts {
    pub thresholds: Vec<f64>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub positives: u64,
}

impl EdgeCounts {
    /// `count` thresholds evenly spaced over `[0, 1]`.
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::contract(format!("need at least 2 thresholds, got {count}")));
        }
        let thresholds = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
        Ok(EdgeCounts { thresholds, tp: vec![0; count], fp: vec![0; count], positives: 0 })
    }

    pub fn add(&mut self, prob: &[f64], gt: &[u8]) -> Result<()> {
        if prob.len() != gt.len() {
            return Err(Error::shape("edge map and ground truth differ in size"));
        }
        if let Some(p) = prob.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Domain(format!("edge probability {p} outside [0, 1]")));
        }
        for (&p, &g) in prob.iter().zip(gt) {
            let positive = g != 0;
            self.positives += positive as u64;
            // thresholds ascend, so the predicted-positive set is a prefix
            let k = self.thresholds.partition_point(|&t| t <= p);
            let counts = if positive { &mut self.tp } else { &mut self.fp };
            for c in &mut counts[..k] {
                *c += 1;
            }
        }
        Ok(())
    }

    pub fn report(&self) -> EdgeReport {
        let mut curve = Vec::with_capacity(self.thresholds.len());
        let (mut best_f, mut best_threshold) = (0.0, self.thresholds[0]);
        for (i, &t) in self.thresholds.iter().enumerate() {
            let (tp, fp) = (self.tp[i] as f64, self.fp[i] as f64);
            let precision = if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) };
            let recall = if self.positives == 0 { 0.0 } else { tp / self.positives as f64 };
            let f = if precision + recall == 0.0 || self.positives == 0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if f > best_f {
                best_f = f;
                best_threshold = t;
            }
            curve.push(PrPoint { threshold: t, precision, recall, f });
        }
        EdgeReport { best_f, best_threshold, curve, degenerate: self.positives == 0 }
    }
}

pub fn edge_fmeasure(prob: &[f64], gt: &[u8], thresholds: usize) -> Result<EdgeReport> {
    let mut c = EdgeCounts::new(thresholds)?;
    c.add(prob, gt)?;
    Ok(c.report())
}
