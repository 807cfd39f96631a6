//! `sigm_α`: the shifted sigmoid that maps significance to scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Graph, Var};

/// Significance at which the score interval is read off.
pub const INTERVAL_SIGNIFICANCE: f64 = 500.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationConfig {
    pub alpha: f64,
    pub n_test: usize,
}

impl ActivationConfig {
    pub fn new(alpha: f64, n_test: usize) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::param(format!("alpha must be positive, got {alpha}")));
        }
        if n_test == 0 {
            return Err(Error::param("number of tests must be at least 1"));
        }
        Ok(ActivationConfig { alpha, n_test })
    }

    fn shift(&self) -> f64 {
        (self.n_test as f64).ln()
    }
}

/// `2 / (1 + exp(-α (x + ln N))) - 1`.
pub fn sigm_alpha_scalar(x: f64, cfg: &ActivationConfig) -> f64 {
    2.0 * sigmoid_scalar(cfg.alpha * (x + cfg.shift())) - 1.0
}

/// Upper end of the useful threshold interval, `sigm_α(500)` with one test.
pub fn threshold_interval_upper(alpha: f64) -> Result<f64> {
    let cfg = ActivationConfig::new(alpha, 1)?;
    Ok(sigm_alpha_scalar(INTERVAL_SIGNIFICANCE, &cfg))
}

/// The interval bound as a two-decimal threshold, rounded outward so the
/// interval still contains `sigm_α(500)`.
pub fn threshold_interval_bound(alpha: f64) -> Result<f64> {
    Ok((threshold_interval_upper(alpha)? * 100.0).ceil() / 100.0)
}

/// Inverse of [`sigm_alpha_scalar`] on (-1, 1).
pub fn sigm_alpha_inverse(y: f64, cfg: &ActivationConfig) -> f64 {
    let p = (y + 1.0) / 2.0;
    (p / (1.0 - p)).ln() / cfg.alpha - cfg.shift()
}

impl Graph {
    pub fn sigm_alpha(&mut self, x: Var, cfg: &ActivationConfig) -> Var {
        let (alpha, shift) = (cfg.alpha, cfg.shift());
        self.unary(
            x,
            move |v| 2.0 * sigmoid_scalar(alpha * (v + shift)) - 1.0,
            move |_, y| {
                // y = 2σ - 1, dy/dx = 2ασ(1-σ) = α(1-y²)/2
                0.5 * alpha * (1.0 - y * y)
            },
        )
    }
}
