//! Object- and pixel-level detection metrics and threshold sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::components::same_size;
use crate::eval::{binarize, connected_components, detect, match_objects, BinaryMap, DetectionSet};
use crate::numerics::Tensor;

/// Number of thresholds in the default sweep (`i / 50`, `i = 0..=50`).
pub const SWEEP_STEPS: usize = 51;

/// Which binarization thresholds an AP sweep visits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdSweep {
    /// `n` evenly spaced thresholds covering [0, 1].
    Uniform(usize),
    /// Every distinct score, plus one threshold below all of them. The
    /// resulting curve depends only on the ranking of the scores.
    Exact,
}

impl Default for ThresholdSweep {
    fn default() -> Self {
        ThresholdSweep::Uniform(SWEEP_STEPS)
    }
}

impl ThresholdSweep {
    pub fn thresholds(&self, scores: &[Tensor]) -> Vec<f64> {
        match *self {
            ThresholdSweep::Uniform(n) => {
                let n = n.max(2);
                (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
            }
            ThresholdSweep::Exact => {
                let mut all: Vec<f64> = scores.iter().flat_map(|t| t.data().iter().copied()).collect();
                all.sort_by(f64::total_cmp);
                all.dedup();
                let mut out = Vec::with_capacity(all.len() + 1);
                out.push(f64::NEG_INFINITY);
                out.extend(all);
                out
            }
        }
    }
}

/// Ratio with the empty-denominator convention `1`.
fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Micro-averaged object counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub images: usize,
}

impl ObjectCounts {
    /// One when nothing was predicted.
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    /// One when there is no ground truth.
    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    pub fn fa_per_image(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.fp as f64 / self.images as f64
        }
    }

    pub fn add(&mut self, other: ObjectCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.images += other.images;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub fa_per_image: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl PixelCounts {
    pub fn precision(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }

    pub fn add(&mut self, o: PixelCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub tolerance_px: usize,
}

fn check_lengths(scores: &[Tensor], gts: &[BinaryMap]) -> Result<()> {
    if scores.len() != gts.len() {
        return Err(Error::param(format!(
            "{} score maps for {} ground-truth maps",
            scores.len(),
            gts.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::param("metrics need at least one image"));
    }
    Ok(())
}

pub fn object_counts_for(pred: &DetectionSet, gt: &DetectionSet, iou_min: f64) -> Result<ObjectCounts> {
    let m = match_objects(pred, gt, iou_min)?;
    Ok(ObjectCounts {
        tp: m.tp(),
        fp: m.fp(),
        fn_: m.fn_(),
        images: 1,
    })
}

/// Dataset counts at one threshold.
pub fn object_counts(
    scores: &[Tensor],
    gts: &[BinaryMap],
    threshold: f64,
    iou_min: f64,
) -> Result<ObjectCounts> {
    check_lengths(scores, gts)?;
    let mut total = ObjectCounts::default();
    for (s, g) in scores.iter().zip(gts) {
        let pred = detect(s, threshold)?;
        total.add(object_counts_for(&pred, &connected_components(g), iou_min)?);
    }
    Ok(total)
}

/// Area under a precision-recall curve given as `(recall, precision)`
/// points, with the monotone envelope: each precision is replaced by the
/// best precision reached at an equal or higher recall.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut env = vec![0.0; pts.len()];
    let mut best: f64 = 0.0;
    for i in (0..pts.len()).rev() {
        best = best.max(pts[i].1);
        env[i] = best;
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (i, &(r, _)) in pts.iter().enumerate() {
        ap += (r - prev) * env[i];
        prev = r;
    }
    ap
}

/// Object-level precision-recall points over a threshold sweep.
pub fn object_pr_curve(
    scores: &[Tensor],
    gts: &[BinaryMap],
    sweep: ThresholdSweep,
    iou_min: f64,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores, gts)?;
    let gt_sets: Vec<DetectionSet> = gts.iter().map(connected_components).collect();
    let mut points = Vec::new();
    for t in sweep.thresholds(scores) {
        let mut total = ObjectCounts::default();
        for (s, g) in scores.iter().zip(&gt_sets) {
            total.add(object_counts_for(&detect(s, t)?, g, iou_min)?);
        }
        points.push((total.recall(), total.precision()));
    }
    Ok(points)
}

pub fn object_ap(scores: &[Tensor], gts: &[BinaryMap], sweep: ThresholdSweep, iou_min: f64) -> Result<f64> {
    Ok(average_precision(&object_pr_curve(scores, gts, sweep, iou_min)?))
}

pub fn object_metrics(
    scores: &[Tensor],
    gts: &[BinaryMap],
    threshold: f64,
    iou_min: f64,
) -> Result<ObjectMetrics> {
    let c = object_counts(scores, gts, threshold, iou_min)?;
    Ok(ObjectMetrics {
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        ap: object_ap(scores, gts, ThresholdSweep::default(), iou_min)?,
        fa_per_image: c.fa_per_image(),
    })
}

/// Pixel counts where predictions falling in the ring of width `tol`
/// around the ground truth are ignored.
pub fn pixel_counts(pred: &BinaryMap, gt: &BinaryMap, tol: usize) -> Result<PixelCounts> {
    same_size(pred, gt)?;
    let near = gt.dilate(tol);
    Ok(count_with_ring(pred, gt, &near))
}

fn count_with_ring(pred: &BinaryMap, gt: &BinaryMap, near: &BinaryMap) -> PixelCounts {
    let mut c = PixelCounts::default();
    for i in 0..pred.data.len() {
        match (pred.data[i], gt.data[i]) {
            (true, true) => c.tp += 1,
            (true, false) if !near.data[i] => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

pub fn pixel_pr_curve(
    scores: &[Tensor],
    gts: &[BinaryMap],
    tol: usize,
    sweep: ThresholdSweep,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(scores, gts)?;
    let rings: Vec<BinaryMap> = gts.iter().map(|g| g.dilate(tol)).collect();
    let mut points = Vec::new();
    for t in sweep.thresholds(scores) {
        let mut total = PixelCounts::default();
        for ((s, g), near) in scores.iter().zip(gts).zip(&rings) {
            let pred = binarize(s, t)?;
            same_size(&pred, g)?;
            total.add(count_with_ring(&pred, g, near));
        }
        points.push((total.recall(), total.precision()));
    }
    Ok(points)
}

pub fn pixel_metrics(scores: &[Tensor], gts: &[BinaryMap], threshold: f64, tol: usize) -> Result<PixelMetrics> {
    check_lengths(scores, gts)?;
    let mut total = PixelCounts::default();
    for (s, g) in scores.iter().zip(gts) {
        total.add(pixel_counts(&binarize(s, threshold)?, g, tol)?);
    }
    Ok(PixelMetrics {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        ap: average_precision(&pixel_pr_curve(scores, gts, tol, ThresholdSweep::default())?),
        tolerance_px: tol,
    })
}

/// Mean number of predicted components touching each ground-truth object
/// that is touched at all.
pub fn fragmentation(scores: &[Tensor], gts: &[BinaryMap], threshold: f64) -> Result<f64> {
    check_lengths(scores, gts)?;
    let (mut pieces, mut objects) = (0usize, 0usize);
    for (s, g) in scores.iter().zip(gts) {
        let bin = binarize(s, threshold)?;
        same_size(&bin, g)?;
        let pred = connected_components(&bin);
        let gt = connected_components(g);
        for comp in &gt.components {
            let mut touching: Vec<usize> = comp.pixels.iter().filter_map(|&i| pred.labels[i]).collect();
            touching.sort_unstable();
            touching.dedup();
            if !touching.is_empty() {
                pieces += touching.len();
                objects += 1;
            }
        }
    }
    Ok(if objects == 0 {
        0.0
    } else {
        pieces as f64 / objects as f64
    })
}
