//! Pointwise, reduction and channel-shuffling operations.

use crate::error::{Error, Result};
use crate::numerics::{Graph, Shape, Tensor, Var};

/// Reduction applied across the channel axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduce {
    Min,
    Max,
}

fn same_shape(g: &Graph, a: Var, b: Var, op: &str) -> Result<Shape> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::param(format!("{op}: shape {sa} vs {sb}")));
    }
    Ok(sa)
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    /// Applies `f` elementwise; `df(x, y)` is the local derivative given the
    /// input and output values.
    pub fn unary(
        &mut self,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Var {
        let input = self.value(x);
        let data = input.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(input.shape(), data).expect("same size");
        self.record(
            &[x],
            out,
            Box::new(move |ctx| {
                let g = ctx
                    .inputs[0]
                    .data()
                    .iter()
                    .zip(ctx.output.data())
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |v| v * s, move |_, _| s)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.unary(x, move |v| v + s, |_, _| 1.0)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = same_shape(self, a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.record(
            &[a, b],
            Tensor::new(s, data)?,
            Box::new(|ctx| vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = same_shape(self, a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.record(
            &[a, b],
            Tensor::new(s, data)?,
            Box::new(|ctx| {
                vec![
                    Some(ctx.grad.to_vec()),
                    Some(ctx.grad.iter().map(|g| -g).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let s = same_shape(self, a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.record(
            &[a, b],
            Tensor::new(s, data)?,
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let ga = ctx.needs[0]
                    .then(|| ctx.grad.iter().zip(b).map(|(g, y)| g * y).collect());
                let gb = ctx.needs[1]
                    .then(|| ctx.grad.iter().zip(a).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).sum();
        let n = self.value(x).numel();
        self.record(
            &[x],
            Tensor::scalar(total),
            Box::new(move |ctx| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .map(|&v| self.shape(v))
            .ok_or_else(|| Error::param("concat_channels: empty input"))?;
        let mut channels = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(Error::param(format!(
                    "concat_channels: shape {s} vs {first}"
                )));
            }
            channels.push(s.c);
        }
        let total_c: usize = channels.iter().sum();
        let out_shape = Shape::new(first.n, total_c, first.h, first.w);
        let plane = first.plane();
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..first.n {
            for (&p, &c) in parts.iter().zip(&channels) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[n * c * plane..(n + 1) * c * plane]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        Ok(self.record(
            parts,
            out,
            Box::new(move |ctx| {
                let mut grads: Vec<Vec<f64>> = channels
                    .iter()
                    .map(|&c| Vec::with_capacity(first.n * c * plane))
                    .collect();
                let mut offset = 0;
                for _ in 0..first.n {
                    for (k, &c) in channels.iter().enumerate() {
                        grads[k].extend_from_slice(&ctx.grad[offset..offset + c * plane]);
                        offset += c * plane;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Copies channel `c` out as a (n, 1, h, w) map.
    pub fn select_channel(&mut self, x: Var, c: usize) -> Result<Var> {
        let s = self.shape(x);
        if c >= s.c {
            return Err(Error::param(format!("select_channel: {c} out of {}", s.c)));
        }
        let plane = s.plane();
        let src = self.value(x);
        let mut data = Vec::with_capacity(s.n * plane);
        for n in 0..s.n {
            data.extend_from_slice(src.plane(n, c));
        }
        let out = Tensor::new(Shape::new(s.n, 1, s.h, s.w), data)?;
        Ok(self.record(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; s.numel()];
                for n in 0..s.n {
                    let dst = (n * s.c + c) * plane;
                    g[dst..dst + plane].copy_from_slice(&ctx.grad[n * plane..(n + 1) * plane]);
                }
                vec![Some(g)]
            }),
        ))
    }

    /// Multiplies each (n, c) plane of `x` by the matching entry of `w`,
    /// which has shape (n, c, 1, 1) or (1, c, 1, 1).
    pub fn scale_channels(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.c != sx.c || sw.h != 1 || sw.w != 1 || (sw.n != sx.n && sw.n != 1) {
            return Err(Error::param(format!(
                "scale_channels: weights {sw} do not fit input {sx}"
            )));
        }
        let per_sample = sw.n == sx.n;
        let widx = move |n: usize, c: usize| if per_sample { n * sx.c + c } else { c };
        let plane = sx.plane();
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let mut data = vec![0.0; sx.numel()];
        for n in 0..sx.n {
            for c in 0..sx.c {
                let k = widx(n, c);
                let base = (n * sx.c + c) * plane;
                for i in base..base + plane {
                    data[i] = xv[i] * wv[k];
                }
            }
        }
        let out = Tensor::new(sx, data)?;
        Ok(self.record(
            &[x, w],
            out,
            Box::new(move |ctx| {
                let (xv, wv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let mut gx = ctx.needs[0].then(|| vec![0.0; sx.numel()]);
                let mut gw = ctx.needs[1].then(|| vec![0.0; sw.numel()]);
                for n in 0..sx.n {
                    for c in 0..sx.c {
                        let k = widx(n, c);
                        let base = (n * sx.c + c) * plane;
                        let mut acc = 0.0;
                        for i in base..base + plane {
                            if let Some(gx) = gx.as_mut() {
                                gx[i] = ctx.grad[i] * wv[k];
                            }
                            acc += ctx.grad[i] * xv[i];
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[k] += acc;
                        }
                    }
                }
                vec![gx, gw]
            }),
        ))
    }

    /// Per-pixel min or max across channels, giving a (n, 1, h, w) map. The
    /// gradient flows to the selected channel (first one on ties).
    pub fn channel_reduce(&mut self, x: Var, reduce: Reduce) -> Var {
        let s = self.shape(x);
        let plane = s.plane();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(s.n * plane);
        let mut arg = Vec::with_capacity(s.n * plane);
        for n in 0..s.n {
            for i in 0..plane {
                let mut best = xv[(n * s.c) * plane + i];
                let mut best_c = 0;
                for c in 1..s.c {
                    let v = xv[(n * s.c + c) * plane + i];
                    let better = match reduce {
                        Reduce::Max => v > best,
                        Reduce::Min => v < best,
                    };
                    if better {
                        best = v;
                        best_c = c;
                    }
                }
                data.push(best);
                arg.push(best_c);
            }
        }
        let out = Tensor::new(Shape::new(s.n, 1, s.h, s.w), data).expect("sized");
        self.record(
            &[x],
            out,
            Box::new(move |ctx| {
                let mut g = vec![0.0; s.numel()];
                for n in 0..s.n {
                    for i in 0..plane {
                        let c = arg[n * plane + i];
                        g[(n * s.c + c) * plane + i] = ctx.grad[n * plane + i];
                    }
                }
                vec![Some(g)]
            }),
        )
    }
}
