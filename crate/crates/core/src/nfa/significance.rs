//! Per-pixel significance `S = -ln NFA` against a Gaussian naive model.

use crate::error::{Error, Result};
use crate::nfa::NaiveModel;
use crate::numerics::{Graph, Shape, Tensor, Var};
use crate::special::{log_gamma, log_upper_incomplete_gamma_with_dx};

/// Significance values of one scale, with the bookkeeping needed to fuse and
/// squash them.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignificanceMap {
    /// (n, 1, h, w) values on the tape.
    pub values: Var,
    pub scale_index: usize,
    pub n_test: usize,
}

/// Per pixel value and `dS/du`, for features already checked against the
/// model.
fn evaluate(features: &Tensor, model: &NaiveModel) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = features.shape();
    let k = s.c;
    let a = k as f64 / 2.0;
    let ln_n = (model.n_test as f64).ln();
    let lg_a = log_gamma(a)?;
    let plane = s.plane();
    let data = features.data();
    let mut values = Vec::with_capacity(s.n * plane);
    let mut slopes = Vec::with_capacity(s.n * plane);
    let mut r = vec![0.0; k];
    for n in 0..s.n {
        for p in 0..plane {
            for (c, rc) in r.iter_mut().enumerate() {
                *rc = data[(n * k + c) * plane + p] - model.center[c];
            }
            let u = model.half_mahalanobis(&r);
            if !u.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite Mahalanobis distance at sample {n}, pixel {p}"
                )));
            }
            if u <= 0.0 {
                values.push(-ln_n);
                slopes.push(0.0);
                continue;
            }
            let (lg, dlg) = log_upper_incomplete_gamma_with_dx(a, u)?;
            // rounding can push ln Γ(a, u) a hair above ln Γ(a) for tiny u
            values.push((-ln_n + lg_a - lg).max(-ln_n));
            slopes.push(-dlg);
        }
    }
    Ok((values, slopes))
}

fn check_channels(shape: Shape, model: &NaiveModel) -> Result<()> {
    if shape.c != model.channels() {
        return Err(Error::param(format!(
            "significance: features have {} channels, naive model has {}",
            shape.c,
            model.channels()
        )));
    }
    Ok(())
}

/// Significance of every pixel as a plain tensor (n, 1, h, w), off the tape.
pub fn significance_values(features: &Tensor, model: &NaiveModel) -> Result<Tensor> {
    check_channels(features.shape(), model)?;
    let s = features.shape();
    let (values, _) = evaluate(features, model)?;
    Tensor::new(Shape::new(s.n, 1, s.h, s.w), values)
}

/// Records the significance map of `features` on the tape. The model is a
/// constant: gradients flow to the features only.
pub fn significance(
    g: &mut Graph,
    features: Var,
    model: &NaiveModel,
    scale_index: usize,
) -> Result<SignificanceMap> {
    let s = g.shape(features);
    check_channels(s, model)?;
    let (values, slopes) = evaluate(g.value(features), model)?;
    let out = Tensor::new(Shape::new(s.n, 1, s.h, s.w), values)?;
    let model_c = model.clone();
    let var = g.record(
        &[features],
        out,
        Box::new(move |ctx| {
            let k = s.c;
            let plane = s.plane();
            let x = ctx.inputs[0].data();
            let mut grad = vec![0.0; s.numel()];
            let mut r = vec![0.0; k];
            let mut pr = vec![0.0; k];
            for n in 0..s.n {
                for p in 0..plane {
                    let i = n * plane + p;
                    let coef = ctx.grad[i] * slopes[i];
                    if coef == 0.0 {
                        continue;
                    }
                    for (c, rc) in r.iter_mut().enumerate() {
                        *rc = x[(n * k + c) * plane + p] - model_c.center[c];
                    }
                    model_c.precision_times(&r, &mut pr);
                    for c in 0..k {
                        grad[(n * k + c) * plane + p] = coef * pr[c];
                    }
                }
            }
            vec![Some(grad)]
        }),
    );
    Ok(SignificanceMap {
        values: var,
        scale_index,
        n_test: model.n_test,
    })
}
