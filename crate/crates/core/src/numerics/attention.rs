//! Local windowed self-attention.
//!
//! Each pixel attends to the `window x window` neighbourhood centred on it.
//! Out-of-image neighbours are masked (they take no probability mass). A
//! learned scalar bias per window offset is added to the logits and shared
//! across heads.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor, Var};

impl Graph {
    /// `q`, `k`, `v`: (n, d, h, w) with `d` divisible by `heads`;
    /// `offset_bias`: `window * window` values in row-major offset order.
    pub fn window_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        offset_bias: Var,
        window: usize,
        heads: usize,
    ) -> Result<Var> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(Error::param(format!(
                "window_attention: window must be odd, got {window}"
            )));
        }
        let s = self.shape(q);
        if self.shape(k) != s || self.shape(v) != s {
            return Err(Error::param(format!(
                "window_attention: q {s}, k {}, v {} must match",
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || !s.c.is_multiple_of(heads) {
            return Err(Error::param(format!(
                "window_attention: {} channels not divisible into {heads} heads",
                s.c
            )));
        }
        let taps = window * window;
        if self.shape(offset_bias).numel() != taps {
            return Err(Error::param(format!(
                "window_attention: offset bias needs {taps} values, got {}",
                self.shape(offset_bias).numel()
            )));
        }
        let r = (window / 2) as isize;
        let dh = s.c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (h, w) = (s.h as isize, s.w as isize);
        let plane = s.plane();

        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let bv = self.value(offset_bias).data();

        // probs[(((n * heads + hd) * plane + pix) * taps + t)]
        let mut probs = vec![0.0; s.n * heads * plane * taps];
        let mut out = vec![0.0; s.numel()];
        let mut logits = vec![0.0; taps];
        for n in 0..s.n {
            for hd in 0..heads {
                let c0 = hd * dh;
                for y in 0..h {
                    for x in 0..w {
                        let pix = (y * w + x) as usize;
                        let mut max_logit = f64::NEG_INFINITY;
                        for t in 0..taps {
                            let yy = y + (t / window) as isize - r;
                            let xx = x + (t % window) as isize - r;
                            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                logits[t] = f64::NEG_INFINITY;
                                continue;
                            }
                            let nb = (yy * w + xx) as usize;
                            let mut dot = 0.0;
                            for c in c0..c0 + dh {
                                let base = (n * s.c + c) * plane;
                                dot += qv[base + pix] * kv[base + nb];
                            }
                            logits[t] = dot * scale + bv[t];
                            max_logit = max_logit.max(logits[t]);
                        }
                        let pbase = ((n * heads + hd) * plane + pix) * taps;
                        let mut z = 0.0;
                        for t in 0..taps {
                            let e = if logits[t].is_finite() {
                                (logits[t] - max_logit).exp()
                            } else {
                                0.0
                            };
                            probs[pbase + t] = e;
                            z += e;
                        }
                        for t in 0..taps {
                            let p = probs[pbase + t] / z;
                            probs[pbase + t] = p;
                            if p == 0.0 {
                                continue;
                            }
                            let yy = y + (t / window) as isize - r;
                            let xx = x + (t % window) as isize - r;
                            let nb = (yy * w + xx) as usize;
                            for c in c0..c0 + dh {
                                let base = (n * s.c + c) * plane;
                                out[base + pix] += p * vv[base + nb];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::new(s, out)?;
        Ok(self.record(
            &[q, k, v, offset_bias],
            value,
            Box::new(move |ctx| {
                let (qv, kv, vv) = (
                    ctx.inputs[0].data(),
                    ctx.inputs[1].data(),
                    ctx.inputs[2].data(),
                );
                let g = ctx.grad;
                let mut gq = vec![0.0; s.numel()];
                let mut gk = vec![0.0; s.numel()];
                let mut gv = vec![0.0; s.numel()];
                let mut gb = vec![0.0; taps];
                let mut dp = vec![0.0; taps];
                for n in 0..s.n {
                    for hd in 0..heads {
                        let c0 = hd * dh;
                        for y in 0..h {
                            for x in 0..w {
                                let pix = (y * w + x) as usize;
                                let pbase = ((n * heads + hd) * plane + pix) * taps;
                                let mut weighted = 0.0;
                                for t in 0..taps {
                                    let p = probs[pbase + t];
                                    dp[t] = 0.0;
                                    if p == 0.0 {
                                        continue;
                                    }
                                    let yy = y + (t / window) as isize - r;
                                    let xx = x + (t % window) as isize - r;
                                    let nb = (yy * w + xx) as usize;
                                    let mut acc = 0.0;
                                    for c in c0..c0 + dh {
                                        let base = (n * s.c + c) * plane;
                                        acc += g[base + pix] * vv[base + nb];
                                        gv[base + nb] += p * g[base + pix];
                                    }
                                    dp[t] = acc;
                                    weighted += p * acc;
                                }
                                for t in 0..taps {
                                    let p = probs[pbase + t];
                                    if p == 0.0 {
                                        continue;
                                    }
                                    let dl = p * (dp[t] - weighted);
                                    gb[t] += dl;
                                    let yy = y + (t / window) as isize - r;
                                    let xx = x + (t % window) as isize - r;
                                    let nb = (yy * w + xx) as usize;
                                    for c in c0..c0 + dh {
                                        let base = (n * s.c + c) * plane;
                                        gq[base + pix] += scale * dl * kv[base + nb];
                                        gk[base + nb] += scale * dl * qv[base + pix];
                                    }
                                }
                            }
                        }
                    }
                }
                vec![Some(gq), Some(gk), Some(gv), Some(gb)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values() -> Tensor {
        Tensor::from_fn([1, 2, 4, 5], |_, c, y, x| (c * 20 + y * 5 + x) as f64 * 0.1)
    }

    #[test]
    fn window_one_returns_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::full([1, 2, 4, 5], 0.3));
        let k = g.constant(Tensor::full([1, 2, 4, 5], -0.7));
        let v = g.constant(values());
        let b = g.constant(Tensor::zeros([1, 1, 1, 1]));
        let y = g.window_attention(q, k, v, b, 1, 1).unwrap();
        assert_eq!(g.value(y), &values());
    }

    #[test]
    fn uniform_logits_average_in_window() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros([1, 2, 4, 5]));
        let k = g.constant(Tensor::zeros([1, 2, 4, 5]));
        let vt = values();
        let v = g.constant(vt.clone());
        let b = g.constant(Tensor::zeros([1, 1, 3, 3]));
        let y = g.window_attention(q, k, v, b, 3, 2).unwrap();
        let out = g.value(y);
        for c in 0..2 {
            for y0 in 0..4isize {
                for x0 in 0..5isize {
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for yy in y0 - 1..=y0 + 1 {
                        for xx in x0 - 1..=x0 + 1 {
                            if (0..4).contains(&yy) && (0..5).contains(&xx) {
                                acc += vt.at(0, c, yy as usize, xx as usize);
                                cnt += 1.0;
                            }
                        }
                    }
                    let got = out.at(0, c, y0 as usize, x0 as usize);
                    assert!((got - acc / cnt).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn even_window_rejected() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros([1, 1, 3, 3]));
        let b = g.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(g.window_attention(q, q, q, b, 2, 1).is_err());
    }
}
