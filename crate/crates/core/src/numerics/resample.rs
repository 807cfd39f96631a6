//! Pooling and bilinear upsampling.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Shape, Tensor, Var};

/// Source index pair and weight of the upper neighbour for one output
/// coordinate, align-corners=false convention.
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl Graph {
    /// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn maxpool2x2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.h < 2 || s.w < 2 {
            return Err(Error::param(format!("maxpool2x2: input {s} too small")));
        }
        let out = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
        let xv = self.value(x).data();
        let mut y = Vec::with_capacity(out.numel());
        let mut arg = Vec::with_capacity(out.numel());
        for nc in 0..s.n * s.c {
            let base = nc * s.plane();
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = base + (2 * oy + dy) * s.w + 2 * ox + dx;
                            if xv[i] > best {
                                best = xv[i];
                                best_i = i;
                            }
                        }
                    }
                    y.push(best);
                    arg.push(best_i);
                }
            }
        }
        let value = Tensor::new(out, y)?;
        Ok(self.record(
            &[x],
            value,
            Box::new(move |ctx| {
                let mut g = vec![0.0; s.numel()];
                for (&i, &gy) in arg.iter().zip(ctx.grad) {
                    g[i] += gy;
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Mean over each (h, w) plane, giving (n, c, 1, 1).
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let y: Vec<f64> = (0..s.n * s.c)
            .map(|nc| {
                let base = nc * plane;
                self.value(x).data()[base..base + plane].iter().sum::<f64>() / plane as f64
            })
            .collect();
        let value = Tensor::new(Shape::new(s.n, s.c, 1, 1), y).expect("sized");
        self.record(
            &[x],
            value,
            Box::new(move |ctx| {
                let mut g = vec![0.0; s.numel()];
                for (nc, gy) in ctx.grad.iter().enumerate() {
                    let v = gy / plane as f64;
                    g[nc * plane..(nc + 1) * plane].fill(v);
                }
                vec![Some(g)]
            }),
        )
    }

    /// Bilinear upsampling by an integer power-of-two factor
    /// (align-corners=false, edge-clamped).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::param(format!(
                "upsample_bilinear: factor must be a positive power of two, got {factor}"
            )));
        }
        let s = self.shape(x);
        if factor == 1 {
            let value = self.value(x).clone();
            return Ok(self.record(
                &[x],
                Tensor::new(s, value.into_data())?,
                Box::new(|ctx| vec![Some(ctx.grad.to_vec())]),
            ));
        }
        if s.h == 0 || s.w == 0 {
            return Err(Error::param(format!("upsample_bilinear: empty input {s}")));
        }
        let out = Shape::new(s.n, s.c, s.h * factor, s.w * factor);
        let ty = bilinear_taps(out.h, s.h, factor);
        let tx = bilinear_taps(out.w, s.w, factor);
        let xv = self.value(x).data();
        let mut y = vec![0.0; out.numel()];
        for nc in 0..s.n * s.c {
            let ib = nc * s.plane();
            let ob = nc * out.plane();
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = xv[ib + y0 * s.w + x0] * (1.0 - lx) + xv[ib + y0 * s.w + x1] * lx;
                    let bot = xv[ib + y1 * s.w + x0] * (1.0 - lx) + xv[ib + y1 * s.w + x1] * lx;
                    y[ob + oy * out.w + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        let value = Tensor::new(out, y)?;
        Ok(self.record(
            &[x],
            value,
            Box::new(move |ctx| {
                let mut g = vec![0.0; s.numel()];
                for nc in 0..s.n * s.c {
                    let ib = nc * s.plane();
                    let ob = nc * out.plane();
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let gy = ctx.grad[ob + oy * out.w + ox];
                            g[ib + y0 * s.w + x0] += gy * (1.0 - ly) * (1.0 - lx);
                            g[ib + y0 * s.w + x1] += gy * (1.0 - ly) * lx;
                            g[ib + y1 * s.w + x0] += gy * ly * (1.0 - lx);
                            g[ib + y1 * s.w + x1] += gy * ly * lx;
                        }
                    }
                }
                vec![Some(g)]
            }),
        ))
    }
}
