//! Checks of the false-alarm guarantee and NFA curve export.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nfa::{estimate_naive_model, significance_values, CovarianceForm, NaiveModel};
use crate::numerics::Tensor;
use crate::special::{log_gamma, log_upper_incomplete_gamma};

/// Minimum number of Monte Carlo trials.
pub const MIN_TRIALS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// Mean count of pixels with `NFA <= ε` per map.
    pub mean: f64,
    pub std_err: f64,
    /// `ε + 3 SE`.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonConfig {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Estimate the model from each map instead of supplying the true one.
    pub estimated: bool,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        EpsilonConfig {
            channels: 4,
            h: 100,
            w: 100,
            epsilons: vec![1.0, 10.0],
            trials: 200,
            seed: 0,
            estimated: false,
        }
    }
}

/// Draws standard white Gaussian features, scores them against the naive
/// model and counts the pixels reaching `NFA <= ε`.
pub fn epsilon_meaningfulness_check(cfg: &EpsilonConfig) -> Result<Vec<EpsilonRow>> {
    if cfg.trials < MIN_TRIALS {
        return Err(Error::param(format!(
            "need at least {MIN_TRIALS} trials, got {}",
            cfg.trials
        )));
    }
    if cfg.channels == 0 || cfg.h * cfg.w == 0 {
        return Err(Error::param("map must have channels and pixels"));
    }
    let n_test = cfg.h * cfg.w;
    let truth = NaiveModel::spherical(vec![0.0; cfg.channels], 1.0, n_test)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![Vec::with_capacity(cfg.trials); cfg.epsilons.len()];
    for _ in 0..cfg.trials {
        let x = Tensor::from_fn([1, cfg.channels, cfg.h, cfg.w], |_, _, _, _| {
            StandardNormal.sample(&mut rng)
        });
        let model = if cfg.estimated {
            estimate_naive_model(&x, CovarianceForm::IndependentElliptical)?
        } else {
            truth.clone()
        };
        let s = significance_values(&x, &model)?;
        for (slot, &eps) in counts.iter_mut().zip(&cfg.epsilons) {
            let cut = -eps.ln();
            slot.push(s.data().iter().filter(|&&v| v >= cut).count() as f64);
        }
    }
    Ok(cfg
        .epsilons
        .iter()
        .zip(counts)
        .map(|(&epsilon, c)| {
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let std_err = (var / n).sqrt();
            let bound = epsilon + 3.0 * std_err;
            EpsilonRow {
                epsilon,
                mean,
                std_err,
                bound,
                holds: mean <= bound,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub x: f64,
    pub nfa_log10: f64,
    pub significance: f64,
}

/// NFA and significance of a centred unit-variance Gaussian observation at
/// distance `|x|` from the centre, in `k` dimensions.
pub fn nfa_curve(xs: &[f64], k: usize, n_test: usize) -> Result<Vec<CurveRow>> {
    if k == 0 {
        return Err(Error::param("curve needs K >= 1"));
    }
    if n_test == 0 {
        return Err(Error::param("number of tests must be at least 1"));
    }
    let a = k as f64 / 2.0;
    let lg = log_gamma(a)?;
    let ln_n = (n_test as f64).ln();
    xs.iter()
        .map(|&x| {
            let u = 0.5 * x * x;
            let s = -ln_n + lg - log_upper_incomplete_gamma(a, u)?;
            Ok(CurveRow {
                x,
                nfa_log10: -s / std::f64::consts::LN_10,
                significance: s,
            })
        })
        .collect()
}

pub fn write_curve_csv(rows: &[CurveRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "x,nfa_log10,significance")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.x, r.nfa_log10 + 0.0, r.significance + 0.0)?;
    }
    Ok(())
}
