use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether layers use batch statistics (and update running ones) or the
/// stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Graph {
    /// Per-channel batch normalization.
    ///
    /// `running` holds `[mean_0..mean_c, var_0..var_c]`. In train mode the
    /// batch is normalized with its biased variance and the running
    /// statistics move as `r = 0.9 r + 0.1 batch` (unbiased variance); in eval
    /// mode the running statistics are used as-is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &mut [f64],
        mode: Mode,
    ) -> Result<Var> {
        let s = self.shape(x);
        let c = s.c;
        let m = s.n * s.plane();
        if m == 0 {
            return Err(Error::param("batch_norm: zero-size batch"));
        }
        if self.shape(gamma).numel() != c || self.shape(beta).numel() != c {
            return Err(Error::param(format!(
                "batch_norm: gamma/beta must hold {c} values for input {s}"
            )));
        }
        if running.len() != 2 * c {
            return Err(Error::param(format!(
                "batch_norm: running statistics for {} channels supplied, need {c}",
                running.len() / 2
            )));
        }
        let plane = s.plane();
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());

        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for n in 0..s.n {
                        let base = (n * c + ch) * plane;
                        acc += xv[base..base + plane].iter().sum::<f64>();
                    }
                    mean[ch] = acc / m as f64;
                    let mut sq = 0.0;
                    for n in 0..s.n {
                        let base = (n * c + ch) * plane;
                        sq += xv[base..base + plane]
                            .iter()
                            .map(|v| (v - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                    var[ch] = sq / m as f64;
                    let unbiased = if m > 1 { sq / (m - 1) as f64 } else { var[ch] };
                    running[ch] = BN_MOMENTUM * running[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                    running[c + ch] =
                        BN_MOMENTUM * running[c + ch] + (1.0 - BN_MOMENTUM) * unbiased;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(&running[..c]);
                var.copy_from_slice(&running[c..]);
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let mut xhat = vec![0.0; s.numel()];
        let mut y = vec![0.0; s.numel()];
        for n in 0..s.n {
            for ch in 0..c {
                let base = (n * c + ch) * plane;
                for i in base..base + plane {
                    xhat[i] = (xv[i] - mean[ch]) * inv_std[ch];
                    y[i] = gv[ch] * xhat[i] + bv[ch];
                }
            }
        }
        let out = Tensor::new(s, y)?;
        let train = mode == Mode::Train;
        Ok(self.record(
            &[x, gamma, beta],
            out,
            Box::new(move |ctx| {
                let gv = ctx.inputs[1].data();
                let g = ctx.grad;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for n in 0..s.n {
                    for ch in 0..c {
                        let base = (n * c + ch) * plane;
                        for i in base..base + plane {
                            sum_g[ch] += g[i];
                            sum_gx[ch] += g[i] * xhat[i];
                        }
                    }
                }
                let gx = ctx.needs[0].then(|| {
                    let mut gx = vec![0.0; s.numel()];
                    let mf = m as f64;
                    for n in 0..s.n {
                        for ch in 0..c {
                            let base = (n * c + ch) * plane;
                            let k = gv[ch] * inv_std[ch];
                            for i in base..base + plane {
                                gx[i] = if train {
                                    k * (g[i] - sum_g[ch] / mf - xhat[i] * sum_gx[ch] / mf)
                                } else {
                                    k * g[i]
                                };
                            }
                        }
                    }
                    gx
                });
                vec![gx, Some(sum_gx.clone()), Some(sum_g.clone())]
            }),
        ))
    }
}
