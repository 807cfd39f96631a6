use crate::error::{Error, Result};
use crate::numerics::ParamStore;

pub const ADAGRAD_EPS: f64 = 1e-10;

/// One Adagrad update of every parameter that holds a gradient:
/// `acc += g²`, `θ -= lr g / (√acc + eps)`.
pub fn adagrad_step(store: &mut ParamStore, lr: f64, eps: f64) {
    for p in store.iter_mut() {
        let Some(grad) = p.tensor.grad.take() else {
            continue;
        };
        for ((theta, acc), g) in p.tensor.data_mut().iter_mut().zip(&mut p.accumulator).zip(&grad) {
            *acc += g * g;
            *theta -= lr * g / (acc.sqrt() + eps);
        }
        p.tensor.grad = Some(grad);
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(π t / T)) / 2`.
pub fn cosine_annealing(lr_max: f64, lr_min: f64, t: usize, period: usize) -> Result<f64> {
    if t > period {
        return Err(Error::param(format!(
            "cosine_annealing: step {t} is past the period {period}"
        )));
    }
    if period == 0 {
        return Ok(lr_max);
    }
    let c = (std::f64::consts::PI * t as f64 / period as f64).cos();
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + c))
}
