//! Direct-loop convolutions.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    input: Shape,
    out: Shape,
    k: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    /// Output columns `ox` for which `ox * stride + kx - pad` lands inside
    /// the input row, as a half-open range.
    #[inline]
    fn valid_range(&self, kofs: usize, in_len: usize, out_len: usize) -> (usize, usize) {
        // ix = ox*s + kofs - pad >= 0  and  < in_len
        let s = self.stride;
        let lo = if kofs >= self.pad {
            0
        } else {
            (self.pad - kofs).div_ceil(s)
        };
        let limit = in_len + self.pad;
        let hi = if limit <= kofs {
            0
        } else {
            ((limit - kofs - 1) / s + 1).min(out_len)
        };
        (lo, hi.max(lo))
    }
}

fn conv_forward(geom: &ConvGeom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let ConvGeom {
        input,
        out,
        k,
        stride,
        pad,
    } = *geom;
    let mut y = vec![0.0; out.numel()];
    for n in 0..out.n {
        for co in 0..out.c {
            let obase = (n * out.c + co) * out.plane();
            let bias = b.map_or(0.0, |b| b[co]);
            y[obase..obase + out.plane()].fill(bias);
            for ci in 0..input.c {
                let ibase = (n * input.c + ci) * input.plane();
                for ky in 0..k {
                    let (oy0, oy1) = geom.valid_range(ky, input.h, out.h);
                    for kx in 0..k {
                        let wv = w[((co * input.c + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = geom.valid_range(kx, input.w, out.w);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let orow = obase + oy * out.w;
                            let irow = ibase + iy * input.w;
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let dst = &mut y[orow + ox0..orow + ox1];
                                let src = &x[irow + ix0..irow + ix0 + (ox1 - ox0)];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    y[orow + ox] += wv * x[irow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

fn conv_backward_input(geom: &ConvGeom, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let ConvGeom {
        input,
        out,
        k,
        stride,
        pad,
    } = *geom;
    let mut gx = vec![0.0; input.numel()];
    for n in 0..out.n {
        for co in 0..out.c {
            let obase = (n * out.c + co) * out.plane();
            for ci in 0..input.c {
                let ibase = (n * input.c + ci) * input.plane();
                for ky in 0..k {
                    let (oy0, oy1) = geom.valid_range(ky, input.h, out.h);
                    for kx in 0..k {
                        let wv = w[((co * input.c + ci) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = geom.valid_range(kx, input.w, out.w);
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let orow = obase + oy * out.w;
                            let irow = ibase + iy * input.w;
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let dst = &mut gx[irow + ix0..irow + ix0 + (ox1 - ox0)];
                                let src = &gy[orow + ox0..orow + ox1];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    gx[irow + ix] += wv * gy[orow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_backward_weight(geom: &ConvGeom, gy: &[f64], x: &[f64]) -> Vec<f64> {
    let ConvGeom {
        input,
        out,
        k,
        stride,
        pad,
    } = *geom;
    let mut gw = vec![0.0; out.c * input.c * k * k];
    for n in 0..out.n {
        for co in 0..out.c {
            let obase = (n * out.c + co) * out.plane();
            for ci in 0..input.c {
                let ibase = (n * input.c + ci) * input.plane();
                for ky in 0..k {
                    let (oy0, oy1) = geom.valid_range(ky, input.h, out.h);
                    for kx in 0..k {
                        let (ox0, ox1) = geom.valid_range(kx, input.w, out.w);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * stride + ky - pad;
                            let orow = obase + oy * out.w;
                            let irow = ibase + iy * input.w;
                            if stride == 1 {
                                let ix0 = ox0 + kx - pad;
                                let a = &gy[orow + ox0..orow + ox1];
                                let b = &x[irow + ix0..irow + ix0 + (ox1 - ox0)];
                                acc += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * stride + kx - pad;
                                    acc += gy[orow + ox] * x[irow + ix];
                                }
                            }
                        }
                        gw[((co * input.c + ci) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

impl Graph {
    /// 2D cross-correlation. `weight` has shape (c_out, c_in, k, k); `bias`,
    /// when given, holds c_out values in any shape.
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let input = self.shape(x);
        let ws = self.shape(weight);
        let k = ws.h;
        if ws.w != k || k == 0 {
            return Err(Error::param(format!("conv2d: kernel must be square, got {ws}")));
        }
        if ws.c != input.c {
            return Err(Error::param(format!(
                "conv2d: weight {ws} expects {} input channels, input is {input}",
                ws.c
            )));
        }
        if stride == 0 {
            return Err(Error::param("conv2d: stride must be positive"));
        }
        if input.h + 2 * pad < k || input.w + 2 * pad < k {
            return Err(Error::param(format!(
                "conv2d: kernel {k} with padding {pad} does not fit input {input}"
            )));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs.numel() != ws.n {
                return Err(Error::param(format!(
                    "conv2d: bias {bs} must hold {} values",
                    ws.n
                )));
            }
        }
        let out = Shape::new(
            input.n,
            ws.n,
            (input.h + 2 * pad - k) / stride + 1,
            (input.w + 2 * pad - k) / stride + 1,
        );
        let geom = ConvGeom {
            input,
            out,
            k,
            stride,
            pad,
        };
        let y = conv_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(out, y)?;
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        Ok(self.record(
            &inputs,
            value,
            Box::new(move |ctx| {
                let gx = ctx.needs[0]
                    .then(|| conv_backward_input(&geom, ctx.grad, ctx.inputs[1].data()));
                let gw = ctx.needs[1]
                    .then(|| conv_backward_weight(&geom, ctx.grad, ctx.inputs[0].data()));
                let mut grads = vec![gx, gw];
                if ctx.inputs.len() == 3 {
                    let gb = ctx.needs[2].then(|| {
                        let mut gb = vec![0.0; out.c];
                        for n in 0..out.n {
                            for (co, slot) in gb.iter_mut().enumerate() {
                                let base = (n * out.c + co) * out.plane();
                                *slot += ctx.grad[base..base + out.plane()].iter().sum::<f64>();
                            }
                        }
                        gb
                    });
                    grads.push(gb);
                }
                grads
            }),
        ))
    }

    /// 1D convolution along the channel axis of a (n, c, 1, 1) tensor with a
    /// single odd-length kernel, zero padded, no bias.
    pub fn conv1d_channels(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h != 1 || s.w != 1 {
            return Err(Error::param(format!(
                "conv1d_channels: expected (n, c, 1, 1), got {s}"
            )));
        }
        let k = self.shape(kernel).numel();
        if k.is_multiple_of(2) {
            return Err(Error::param(format!("conv1d_channels: kernel length {k} must be odd")));
        }
        let r = (k / 2) as isize;
        let c = s.c as isize;
        let xv = self.value(x).data();
        let kv = self.value(kernel).data();
        let mut y = vec![0.0; s.numel()];
        for n in 0..s.n {
            for i in 0..c {
                let mut acc = 0.0;
                for (t, &kw) in kv.iter().enumerate() {
                    let j = i + t as isize - r;
                    if (0..c).contains(&j) {
                        acc += kw * xv[n * s.c + j as usize];
                    }
                }
                y[n * s.c + i as usize] = acc;
            }
        }
        let value = Tensor::new(s, y)?;
        Ok(self.record(
            &[x, kernel],
            value,
            Box::new(move |ctx| {
                let (xv, kv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let mut gx = vec![0.0; s.numel()];
                let mut gk = vec![0.0; kv.len()];
                for n in 0..s.n {
                    for i in 0..c {
                        let g = ctx.grad[n * s.c + i as usize];
                        for (t, &kw) in kv.iter().enumerate() {
                            let j = i + t as isize - r;
                            if (0..c).contains(&j) {
                                gx[n * s.c + j as usize] += g * kw;
                                gk[t] += g * xv[n * s.c + j as usize];
                            }
                        }
                    }
                }
                vec![Some(gx), Some(gk)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(x: Tensor, w: Tensor, b: Option<Tensor>, stride: usize, pad: usize) -> Tensor {
        let mut g = Graph::new();
        let x = g.constant(x);
        let w = g.constant(w);
        let b = b.map(|b| g.constant(b));
        let y = g.conv2d(x, w, b, stride, pad).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn zero_input_gives_bias() {
        let w = Tensor::full([2, 1, 3, 3], 0.7);
        let b = Tensor::new([1, 2, 1, 1], vec![1.5, -2.0]).unwrap();
        let y = run(Tensor::zeros([1, 1, 3, 3]), w, Some(b), 1, 1);
        assert_eq!(y.shape(), Shape::new(1, 2, 3, 3));
        assert!(y.plane(0, 0).iter().all(|&v| v == 1.5));
        assert!(y.plane(0, 1).iter().all(|&v| v == -2.0));
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut w = Tensor::zeros([1, 1, 3, 3]);
        w.data_mut()[4] = 1.0;
        let x = Tensor::from_fn([1, 1, 4, 5], |_, _, y, x| (y * 5 + x) as f64 * 0.3 - 1.0);
        let y = run(x.clone(), w, None, 1, 1);
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_reference_with_stride() {
        let x = Tensor::from_fn([2, 2, 5, 6], |n, c, y, x| {
            ((n * 7 + c * 5 + y * 3 + x) % 11) as f64 - 5.0
        });
        let w = Tensor::from_fn([3, 2, 3, 3], |o, i, y, x| ((o + 2 * i + y * x) % 5) as f64 * 0.25);
        for stride in [1, 2] {
            let y = run(x.clone(), w.clone(), None, stride, 1);
            let s = y.shape();
            for n in 0..s.n {
                for o in 0..s.c {
                    for oy in 0..s.h {
                        for ox in 0..s.w {
                            let mut acc = 0.0;
                            for i in 0..2 {
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let iy = (oy * stride + ky) as isize - 1;
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if iy >= 0 && ix >= 0 && iy < 5 && ix < 6 {
                                            acc += w.at(o, i, ky, kx)
                                                * x.at(n, i, iy as usize, ix as usize);
                                        }
                                    }
                                }
                            }
                            assert!((y.at(n, o, oy, ox) - acc).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn channel_mismatch_names_dims() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([1, 3, 4, 4]));
        let w = g.constant(Tensor::zeros([2, 2, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err().to_string();
        assert!(err.contains("(2, 2, 3, 3)") && err.contains("(1, 3, 4, 4)"), "{err}");
    }

    #[test]
    fn conv1d_zero_pads_edges() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let k = g.constant(Tensor::new([1, 1, 1, 3], vec![1.0, 10.0, 100.0]).unwrap());
        let y = g.conv1d_channels(x, k).unwrap();
        assert_eq!(g.value(y).data(), &[210.0, 321.0, 32.0]);
    }
}
