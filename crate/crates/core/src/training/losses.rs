use crate::error::{Error, Result};
use crate::numerics::{Graph, Shape, Tensor, Var};

/// Smoothing constant of the Soft-IoU ratio.
pub const SOFT_IOU_EPS: f64 = 1e-6;

impl Graph {
    /// `Σ_i 1 - (I_i + ε) / (U_i + ε)` over the samples of the batch, with
    /// soft intersection `I = Σ p g` and union `U = Σ p + Σ g - I`.
    pub fn soft_iou_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let s = self.shape(pred);
        if self.shape(target) != s {
            return Err(Error::param(format!(
                "soft_iou_loss: prediction {s} vs target {}",
                self.shape(target)
            )));
        }
        let per = s.numel() / s.n.max(1);
        let (p, g) = (self.value(pred).data(), self.value(target).data());
        let mut stats = Vec::with_capacity(s.n);
        let mut loss = 0.0;
        for n in 0..s.n {
            let (mut i, mut ps, mut gs) = (0.0, 0.0, 0.0);
            for k in n * per..(n + 1) * per {
                i += p[k] * g[k];
                ps += p[k];
                gs += g[k];
            }
            let u = ps + gs - i;
            loss += 1.0 - (i + SOFT_IOU_EPS) / (u + SOFT_IOU_EPS);
            stats.push((i + SOFT_IOU_EPS, u + SOFT_IOU_EPS));
        }
        Ok(self.record(
            &[pred, target],
            Tensor::scalar(loss),
            Box::new(move |ctx| {
                let g = ctx.inputs[1].data();
                let go = ctx.grad[0];
                let mut gp = vec![0.0; s.numel()];
                for (n, &(i, u)) in stats.iter().enumerate() {
                    let inv = 1.0 / (u * u);
                    for k in n * per..(n + 1) * per {
                        // d(I/U)/dp = (g U - I (1 - g)) / U²
                        gp[k] = -go * (g[k] * u - i * (1.0 - g[k])) * inv;
                    }
                }
                vec![Some(gp), None]
            }),
        ))
    }

    /// Anisotropic total variation: mean absolute vertical difference plus
    /// mean absolute horizontal difference.
    pub fn tv_regularizer(&mut self, pred: Var) -> Var {
        let s = self.shape(pred);
        let p = self.value(pred).data();
        let planes = s.n * s.c;
        let nv = planes * s.h.saturating_sub(1) * s.w;
        let nh = planes * s.h * s.w.saturating_sub(1);
        let (mut tv_v, mut tv_h) = (0.0, 0.0);
        for pl in 0..planes {
            let b = pl * s.plane();
            for y in 0..s.h {
                for x in 0..s.w {
                    let i = b + y * s.w + x;
                    if y + 1 < s.h {
                        tv_v += (p[i + s.w] - p[i]).abs();
                    }
                    if x + 1 < s.w {
                        tv_h += (p[i + 1] - p[i]).abs();
                    }
                }
            }
        }
        let wv = if nv > 0 { 1.0 / nv as f64 } else { 0.0 };
        let wh = if nh > 0 { 1.0 / nh as f64 } else { 0.0 };
        let value = tv_v * wv + tv_h * wh;
        self.record(
            &[pred],
            Tensor::new(Shape::scalar(), vec![value]).expect("scalar"),
            Box::new(move |ctx| {
                let p = ctx.inputs[0].data();
                let go = ctx.grad[0];
                let mut gp = vec![0.0; s.numel()];
                let sign = |d: f64| {
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                for pl in 0..planes {
                    let b = pl * s.plane();
                    for y in 0..s.h {
                        for x in 0..s.w {
                            let i = b + y * s.w + x;
                            if y + 1 < s.h {
                                let d = go * wv * sign(p[i + s.w] - p[i]);
                                gp[i + s.w] += d;
                                gp[i] -= d;
                            }
                            if x + 1 < s.w {
                                let d = go * wh * sign(p[i + 1] - p[i]);
                                gp[i + 1] += d;
                                gp[i] -= d;
                            }
                        }
                    }
                }
                vec![Some(gp)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_disjoint() {
        let t = Tensor::new([1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let inv = Tensor::new([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let (p, q, tt) = (g.constant(t.clone()), g.constant(inv), g.constant(t));
        let same = g.soft_iou_loss(p, tt).unwrap();
        let opp = g.soft_iou_loss(q, tt).unwrap();
        assert!(g.value(same).item().unwrap().abs() < 1e-5);
        assert!((g.value(opp).item().unwrap() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn step_edge_tv() {
        let (h, w) = (4, 6);
        let t = Tensor::from_fn([1, 1, h, w], |_, _, _, x| if x >= 3 { 1.0 } else { 0.0 });
        let mut g = Graph::new();
        let p = g.constant(t);
        let tv = g.tv_regularizer(p);
        assert!((g.value(tv).item().unwrap() - 1.0 / (w - 1) as f64).abs() < 1e-15);
        let c = g.constant(Tensor::full([2, 1, 3, 3], 0.4));
        let tv = g.tv_regularizer(c);
        assert_eq!(g.value(tv).item().unwrap(), 0.0);
    }
}
