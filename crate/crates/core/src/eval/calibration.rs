//! Score histograms and per-bin accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::BinaryMap;
use crate::nfa::{sigm_alpha_scalar, ActivationConfig};
use crate::numerics::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: usize,
    /// Scores of ground-truth positive pixels, per bin.
    pub tp_hist: Vec<usize>,
    /// Scores of ground-truth negative pixels, per bin.
    pub fp_hist: Vec<usize>,
    /// Fraction of positives in each bin; `None` for empty bins.
    pub accuracy: Vec<Option<f64>>,
    /// Share of all pixels whose score lands in the first or last bin.
    pub extreme_fraction: f64,
}

impl CalibrationReport {
    pub fn occupied_tp_bins(&self) -> usize {
        self.tp_hist.iter().filter(|&&c| c > 0).count()
    }

    /// Count of adjacent occupied-bin pairs where accuracy drops.
    pub fn accuracy_inversions(&self) -> usize {
        let acc: Vec<f64> = self.accuracy.iter().flatten().copied().collect();
        acc.windows(2).filter(|w| w[1] < w[0]).count()
    }
}

/// Bin of a score in `[0, 1)` split into `bins` equal parts; out-of-range
/// scores are clamped to the end bins.
pub fn bin_of(score: f64, bins: usize) -> usize {
    let b = (score * bins as f64).floor();
    if b < 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

pub fn calibration_report(scores: &[Tensor], gts: &[BinaryMap], bins: usize) -> Result<CalibrationReport> {
    if bins == 0 {
        return Err(Error::param("calibration needs at least one bin"));
    }
    if scores.len() != gts.len() {
        return Err(Error::param(format!(
            "{} score maps for {} ground-truth maps",
            scores.len(),
            gts.len()
        )));
    }
    let mut tp_hist = vec![0; bins];
    let mut fp_hist = vec![0; bins];
    for (s, g) in scores.iter().zip(gts) {
        if s.numel() != g.data.len() {
            return Err(Error::param(format!(
                "score map {} does not match a {}x{} mask",
                s.shape(),
                g.h,
                g.w
            )));
        }
        for (&v, &pos) in s.data().iter().zip(&g.data) {
            let b = bin_of(v, bins);
            if pos {
                tp_hist[b] += 1;
            } else {
                fp_hist[b] += 1;
            }
        }
    }
    let accuracy = tp_hist
        .iter()
        .zip(&fp_hist)
        .map(|(&t, &f)| (t + f > 0).then(|| t as f64 / (t + f) as f64))
        .collect();
    let total: usize = tp_hist.iter().sum::<usize>() + fp_hist.iter().sum::<usize>();
    let extreme = tp_hist[0] + fp_hist[0] + if bins > 1 { tp_hist[bins - 1] + fp_hist[bins - 1] } else { 0 };
    Ok(CalibrationReport {
        bins,
        tp_hist,
        fp_hist,
        accuracy,
        extreme_fraction: if total == 0 {
            0.0
        } else {
            extreme as f64 / total as f64
        },
    })
}

/// Re-applies `sigm_α` with a new `alpha` to stored significance maps.
pub fn rescore(significance: &[Tensor], alpha: f64, n_test: usize) -> Result<Vec<Tensor>> {
    let cfg = ActivationConfig::new(alpha, n_test)?;
    significance
        .iter()
        .map(|s| {
            Tensor::new(
                s.shape(),
                s.data().iter().map(|&v| sigm_alpha_scalar(v, &cfg)).collect(),
            )
        })
        .collect()
}

/// Reports before and after re-scoring with `alpha_recalib`.
pub fn recalibrate(
    significance: &[Tensor],
    gts: &[BinaryMap],
    n_test: usize,
    alpha: f64,
    alpha_recalib: f64,
    bins: usize,
) -> Result<(CalibrationReport, CalibrationReport)> {
    let before = calibration_report(&rescore(significance, alpha, n_test)?, gts, bins)?;
    let after = calibration_report(&rescore(significance, alpha_recalib, n_test)?, gts, bins)?;
    Ok((before, after))
}
