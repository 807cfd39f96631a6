//! One-to-one matching of predicted and ground-truth objects.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::eval::DetectionSet;

/// Minimum IoU for a matched pair to count as a true positive.
pub const DEFAULT_IOU_MIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(pred, gt, iou)` of the true positives.
    pub pairs: Vec<(usize, usize, f64)>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.pairs.len()
    }

    pub fn fp(&self) -> usize {
        self.false_positives.len()
    }

    pub fn fn_(&self) -> usize {
        self.false_negatives.len()
    }
}

/// Every overlapping pair `(pred, gt)` with its IoU and the first raster
/// pixel of the intersection.
pub fn overlaps(pred: &DetectionSet, gt: &DetectionSet) -> Result<Vec<(usize, usize, f64, usize)>> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(Error::param(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    // (pred, gt) -> (intersection, first pixel)
    let mut inter: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
    for (i, (p, g)) in pred.labels.iter().zip(&gt.labels).enumerate() {
        if let (Some(p), Some(g)) = (p, g) {
            inter.entry((*p, *g)).and_modify(|e| e.0 += 1).or_insert((1, i));
        }
    }
    let mut out: Vec<(usize, usize, f64, usize)> = inter
        .into_iter()
        .map(|((p, g), (n, first))| {
            let union = pred.components[p].area() + gt.components[g].area() - n;
            (p, g, n as f64 / union as f64, first)
        })
        .collect();
    out.sort_by_key(|o| o.3);
    Ok(out)
}

/// Greedy matching by decreasing IoU; ties go to the pair whose
/// intersection starts first in raster order.
pub fn match_objects(pred: &DetectionSet, gt: &DetectionSet, iou_min: f64) -> Result<MatchResult> {
    let mut cands = overlaps(pred, gt)?;
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.3.cmp(&b.3)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (p, g, iou, _) in cands {
        if iou < iou_min {
            break;
        }
        if pred_used[p] || gt_used[g] {
            continue;
        }
        pred_used[p] = true;
        gt_used[g] = true;
        pairs.push((p, g, iou));
    }
    Ok(MatchResult {
        pairs,
        false_positives: (0..pred.len()).filter(|&i| !pred_used[i]).collect(),
        false_negatives: (0..gt.len()).filter(|&i| !gt_used[i]).collect(),
    })
}
