//! Binarization, connected components, object/pixel metrics, calibration and
//! NFA diagnostics.

mod calibration;
mod components;
mod diagnostics;
mod matching;
mod metrics;

pub use calibration::{bin_of, calibration_report, recalibrate, rescore, CalibrationReport};
pub use components::{binarize, connected_components, detect, BinaryMap, Component, DetectionSet};
pub use diagnostics::{
    epsilon_meaningfulness_check, nfa_curve, write_curve_csv, CurveRow, EpsilonConfig, EpsilonRow,
    MIN_TRIALS,
};
pub use matching::{match_objects, overlaps, MatchResult, DEFAULT_IOU_MIN};
pub use metrics::{
    average_precision, fragmentation, object_ap, object_counts, object_counts_for, object_metrics,
    object_pr_curve, pixel_counts, pixel_metrics, pixel_pr_curve, ObjectCounts, ObjectMetrics,
    PixelCounts, PixelMetrics, ThresholdSweep, SWEEP_STEPS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Binarization threshold of the NFA head.
pub const NFA_THRESHOLD: f64 = 0.1;
/// Binarization threshold of the plain sigmoid head.
pub const PLAIN_THRESHOLD: f64 = 0.5;
/// Ring width of the pixel metrics.
pub const DEFAULT_TOLERANCE_PX: usize = 2;
pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub images: usize,
    pub object: ObjectMetrics,
    pub pixel: PixelMetrics,
    pub calibration: CalibrationReport,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Full report over a set of score maps (1, 1, h, w) and masks.
pub fn evaluate(scores: &[Tensor], gts: &[BinaryMap], threshold: f64, tol: usize) -> Result<MetricsReport> {
    Ok(MetricsReport {
        threshold,
        images: scores.len(),
        object: object_metrics(scores, gts, threshold, DEFAULT_IOU_MIN)?,
        pixel: pixel_metrics(scores, gts, threshold, tol)?,
        calibration: calibration_report(scores, gts, DEFAULT_BINS)?,
    })
}
