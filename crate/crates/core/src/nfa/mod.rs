//! Naive-model estimation, significance maps, `sigm_α`, NFA blocks and
//! multi-scale fusion.

mod activation;
mod blocks;
mod fusion;
mod naive;
mod significance;

pub use activation::{
    sigm_alpha_inverse, sigm_alpha_scalar, threshold_interval_bound, threshold_interval_upper,
    ActivationConfig, INTERVAL_SIGNIFICANCE,
};
pub use blocks::{BasicNfaBlock, SpatialNfaBlock};
pub use fusion::{eca_scale_weights, fuse_scales, upsample_to};
pub use naive::{
    estimate_naive_model, Covariance, CovarianceForm, NaiveModel, DENSE_SHRINKAGE, VARIANCE_FLOOR,
};
pub use significance::{significance, significance_values, SignificanceMap};

use crate::error::{Error, Result};
use crate::numerics::{Mode, Tensor};

/// Where NFA blocks get their naive models from.
#[derive(Clone, Debug, PartialEq)]
pub enum NaivePolicy {
    /// Estimate from the current features (training and inference).
    Estimate,
    /// Reuse previously estimated models, in block order. Used to hold the
    /// statistics fixed while probing gradients numerically.
    Replay(Vec<NaiveModel>),
}

/// Per-forward state: batch-norm mode and naive-model bookkeeping.
#[derive(Clone, Debug)]
pub struct ForwardCtx {
    pub mode: Mode,
    policy: NaivePolicy,
    cursor: usize,
    /// Every model used during the pass, in block order.
    pub models: Vec<NaiveModel>,
}

impl ForwardCtx {
    pub fn new(mode: Mode) -> Self {
        ForwardCtx {
            mode,
            policy: NaivePolicy::Estimate,
            cursor: 0,
            models: Vec::new(),
        }
    }

    pub fn replay(mode: Mode, models: Vec<NaiveModel>) -> Self {
        ForwardCtx {
            mode,
            policy: NaivePolicy::Replay(models),
            cursor: 0,
            models: Vec::new(),
        }
    }

    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    pub fn eval() -> Self {
        Self::new(Mode::Eval)
    }

    pub fn naive_model(&mut self, features: &Tensor, form: CovarianceForm) -> Result<NaiveModel> {
        let model = match &self.policy {
            NaivePolicy::Estimate => estimate_naive_model(features, form)?,
            NaivePolicy::Replay(models) => models
                .get(self.cursor)
                .cloned()
                .ok_or_else(|| {
                    Error::param(format!("no recorded naive model for block {}", self.cursor))
                })?,
        };
        self.cursor += 1;
        self.models.push(model.clone());
        Ok(model)
    }

    /// True if any model used so far had a floored variance.
    pub fn any_degenerate(&self) -> bool {
        self.models.iter().any(|m| m.degenerate)
    }
}
