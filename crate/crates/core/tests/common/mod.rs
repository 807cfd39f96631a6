//! Independent oracles shared by the integration tests and the acceptance
//! runner: central differences, quadrature, flood fill and brute-force
//! assignment. None of them call the code paths they check.
#![allow(dead_code)]

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nfa_core::backbone::{Network, NetworkSpec};
use nfa_core::eval::{BinaryMap, DetectionSet};
use nfa_core::nfa::{
    eca_scale_weights, fuse_scales, significance, ActivationConfig, BasicNfaBlock, CovarianceForm, ForwardCtx,
    NaiveModel, SignificanceMap, SpatialNfaBlock,
};
use nfa_core::numerics::layers::ConvBlock;
use nfa_core::numerics::{Graph, Mode, ParamStore, Reduce, Tensor, Var};
use nfa_core::Result;

// ---------------------------------------------------------------------------
// finite differences

pub const FD_STEP: f64 = 1e-4;
pub const FD_PROBES: usize = 20;
/// Whole networks hold thousands of relu and max-pool kinks, which a large
/// step can cross, while many of their gradients are near 1e-8, where a
/// small step drowns in round-off. Each composite probe keeps the best of
/// these steps; a wrong backward rule fails at all of them.
pub const FD_STEPS_COMPOSITE: [f64; 3] = [1e-4, 1e-5, 1e-6];

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Max relative error between tape gradients of `f` with respect to its
/// inputs and central differences at `probes` random elements.
pub fn fd_inputs<F>(inputs: &[Tensor], probes: usize, step: f64, seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let value = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vs).unwrap();
        g.value(out).item().unwrap()
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = inputs.iter().map(|t| g.input(t.clone().with_requires_grad(true))).collect();
    let out = f(&mut g, &vs).unwrap();
    g.backward(out, &mut ParamStore::new()).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..inputs.len());
        let e = rng.random_range(0..inputs[i].numel());
        let analytic = g.grad(vs[i]).map_or(0.0, |gr| gr[e]);
        let x0 = work[i].data()[e];
        work[i].data_mut()[e] = x0 + step;
        let up = value(&work);
        work[i].data_mut()[e] = x0 - step;
        let down = value(&work);
        work[i].data_mut()[e] = x0;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * step)));
    }
    worst
}

/// Same for parameter gradients, each probe taking the best of `steps`. `f` may touch running statistics, so
/// every evaluation starts from a fresh copy of `store`.
pub fn fd_params<F>(store: &ParamStore, probes: usize, steps: &[f64], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph, &mut ParamStore) -> Result<Var>,
{
    let value = |s: &ParamStore| -> f64 {
        let mut s = s.clone();
        let mut g = Graph::new();
        let out = f(&mut g, &mut s).unwrap();
        g.value(out).item().unwrap()
    };
    let mut grads = store.clone();
    grads.zero_grad();
    let mut g = Graph::new();
    let out = f(&mut g, &mut grads).unwrap();
    g.backward(out, &mut grads).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.random_range(0..store.len());
        let e = rng.random_range(0..store.by_id(i).tensor.numel());
        let analytic = grads.by_id(i).tensor.grad.as_ref().map_or(0.0, |gr| gr[e]);
        let x0 = work.by_id(i).tensor.data()[e];
        let mut best = f64::INFINITY;
        for &step in steps {
            work.by_id_mut(i).tensor.data_mut()[e] = x0 + step;
            let up = value(&work);
            work.by_id_mut(i).tensor.data_mut()[e] = x0 - step;
            let down = value(&work);
            work.by_id_mut(i).tensor.data_mut()[e] = x0;
            best = best.min(rel_err(analytic, (up - down) / (2.0 * step)));
        }
        worst = worst.max(best);
    }
    worst
}

/// `sum(y * w)` with fixed pseudo-random weights, so every output element
/// carries a distinct upstream gradient.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1e);
    let w = g.constant(Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0)));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

/// Magnitudes in [0.2, 1) with random sign: away from relu/max kinks.
pub fn signed(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Two-channel features with half squared norm spread over [30, 50].
pub fn straddling_branch(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let plane = shape[2] * shape[3];
    for n in 0..shape[0] {
        for p in 0..plane {
            let r = (2.0 * rng.random_range(30.0..50.0f64)).sqrt();
            let th = rng.random_range(0.0..std::f64::consts::TAU);
            t.data_mut()[(n * 2) * plane + p] = r * th.cos();
            t.data_mut()[(n * 2 + 1) * plane + p] = r * th.sin();
        }
    }
    t
}

pub fn models_2d(n_test: usize) -> Vec<NaiveModel> {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.1, 0.25, 0.25, 0.9]);
    vec![
        NaiveModel::spherical(vec![0.1, -0.1], 1.0, n_test).unwrap(),
        NaiveModel::independent(vec![0.1, -0.1], 0.8, vec![2.0, 0.5], n_test).unwrap(),
        NaiveModel::dense(vec![0.1, -0.1], sigma, n_test).unwrap(),
    ]
}

pub struct GradCase {
    pub name: String,
    pub err: f64,
    pub tol: f64,
}

impl GradCase {
    pub fn ok(&self) -> bool {
        self.err < self.tol
    }
}

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;

/// Every differentiable operation, checked against central differences.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| {
        out.push(GradCase {
            name: name.into(),
            err,
            tol: PRIMITIVE_TOL,
        })
    };
    let a = signed([2, 3, 4, 4], &mut rng);
    let b = signed([2, 3, 4, 4], &mut rng);
    let one = |f: fn(&mut Graph, Var) -> Result<Var>, x: &Tensor| {
        fd_inputs(std::slice::from_ref(x), FD_PROBES, FD_STEP, seed, |g, v| {
            let y = f(g, v[0])?;
            project(g, y, seed)
        })
    };
    push("relu", one(|g, x| Ok(g.relu(x)), &a));
    push("sigmoid", one(|g, x| Ok(g.sigmoid(x)), &a));
    push("scale", one(|g, x| Ok(g.scale(x, 2.5)), &a));
    push("add_scalar", one(|g, x| Ok(g.add_scalar(x, -0.4)), &a));
    push("sum", one(|g, x| Ok(g.sum(x)), &a));
    push("mean", one(|g, x| Ok(g.mean(x)), &a));
    push("select_channel", one(|g, x| g.select_channel(x, 2), &a));
    push("channel_max", one(|g, x| Ok(g.channel_reduce(x, Reduce::Max)), &a));
    push("channel_min", one(|g, x| Ok(g.channel_reduce(x, Reduce::Min)), &a));
    push("maxpool2x2", one(|g, x| g.maxpool2x2(x), &a));
    push("global_avg_pool", one(|g, x| Ok(g.global_avg_pool(x)), &a));
    push("upsample_x2", one(|g, x| g.upsample_bilinear(x, 2), &a));
    push("upsample_x4", one(|g, x| g.upsample_bilinear(x, 4), &a));
    push("tv", one(|g, x| Ok(g.tv_regularizer(x)), &a));

    let two = |f: fn(&mut Graph, Var, Var) -> Result<Var>, xs: &[Tensor]| {
        fd_inputs(xs, FD_PROBES, FD_STEP, seed, |g, v| {
            let y = f(g, v[0], v[1])?;
            project(g, y, seed)
        })
    };
    let ab = [a.clone(), b.clone()];
    push("add", two(|g, x, y| g.add(x, y), &ab));
    push("sub", two(|g, x, y| g.sub(x, y), &ab));
    push("mul", two(|g, x, y| g.mul(x, y), &ab));
    push("concat_channels", two(|g, x, y| g.concat_channels(&[x, y]), &ab));
    let w = uniform([2, 3, 1, 1], 0.2, 1.5, &mut rng);
    push("scale_channels", two(|g, x, y| g.scale_channels(x, y), &[a.clone(), w]));
    let v = signed([2, 5, 1, 1], &mut rng);
    let k = signed([1, 1, 1, 3], &mut rng);
    push("conv1d_channels", two(|g, x, y| g.conv1d_channels(x, y), &[v, k]));

    let pred = uniform([2, 1, 5, 5], 0.05, 0.95, &mut rng);
    let target = Tensor::from_fn([2, 1, 5, 5], |n, _, y, x| ((y * 5 + x + n) % 4 == 0) as u8 as f64);
    push(
        "soft_iou",
        fd_inputs(&[pred], FD_PROBES, FD_STEP, seed, |g, v| {
            let t = g.constant(target.clone());
            g.soft_iou_loss(v[0], t)
        }),
    );

    let x = signed([1, 2, 5, 5], &mut rng);
    let wt = signed([3, 2, 3, 3], &mut rng);
    let bias = signed([1, 3, 1, 1], &mut rng);
    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d_s2", 2, 1), ("conv2d_valid", 1, 0)] {
        push(
            name,
            fd_inputs(&[x.clone(), wt.clone(), bias.clone()], FD_PROBES, FD_STEP, seed, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
                project(g, y, seed)
            }),
        );
    }

    let gamma = uniform([1, 3, 1, 1], 0.5, 1.5, &mut rng);
    let beta = signed([1, 3, 1, 1], &mut rng);
    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        push(
            name,
            fd_inputs(&[a.clone(), gamma.clone(), beta.clone()], FD_PROBES, FD_STEP, seed, |g, v| {
                let mut running = vec![0.2, 0.0, -0.1, 1.3, 0.8, 1.0];
                let y = g.batch_norm(v[0], v[1], v[2], &mut running, mode)?;
                project(g, y, seed)
            }),
        );
    }

    let mut att: Vec<Tensor> = (0..3).map(|_| signed([1, 2, 5, 5], &mut rng)).collect();
    att.push(signed([1, 1, 1, 9], &mut rng));
    push(
        "window_attention",
        fd_inputs(&att, FD_PROBES, FD_STEP, seed, |g, v| {
            let y = g.window_attention(v[0], v[1], v[2], v[3], 3, 2)?;
            project(g, y, seed)
        }),
    );

    let near = straddling_branch([1, 2, 4, 4], &mut rng);
    let small = signed([1, 2, 4, 4], &mut rng);
    for model in models_2d(16) {
        for (tag, feats) in [("u~40", &near), ("u<40", &small)] {
            push(
                &format!("significance[{}, {tag}]", model.form().name()),
                fd_inputs(std::slice::from_ref(feats), FD_PROBES, FD_STEP, seed, |g, v| {
                    let s = significance(g, v[0], &model, 0)?;
                    project(g, s.values, seed)
                }),
            );
        }
    }

    let sig = uniform([1, 1, 4, 4], -3.0, 2500.0, &mut rng);
    let cfg = ActivationConfig::new(5e-4, 16).unwrap();
    push(
        "sigm_alpha",
        fd_inputs(&[sig], FD_PROBES, FD_STEP, seed, |g, v| {
            let y = g.sigm_alpha(v[0], &cfg);
            project(g, y, seed)
        }),
    );

    let mut fuse: Vec<Tensor> = (0..3).map(|_| uniform([2, 1, 4, 4], -2.0, 5.0, &mut rng)).collect();
    fuse.push(signed([1, 1, 1, 3], &mut rng));
    for reduce in [Reduce::Max, Reduce::Min] {
        push(
            &format!("eca_fusion[{reduce:?}]"),
            fd_inputs(&fuse, FD_PROBES, FD_STEP, seed, |g, v| {
                let maps: Vec<SignificanceMap> = (0..3)
                    .map(|i| SignificanceMap {
                        values: v[i],
                        scale_index: i,
                        n_test: 16,
                    })
                    .collect();
                let w = eca_scale_weights(g, &maps, v[3])?;
                let f = fuse_scales(g, &maps, Some(w), reduce)?;
                project(g, f.values, seed)
            }),
        );
    }
    out
}

/// Conv block, both NFA blocks and whole networks.
pub fn composite_cases(seed: u64) -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0);
    let mut out = Vec::new();
    let x = signed([2, 3, 6, 6], &mut rng);

    let mut store = ParamStore::new();
    let cb = ConvBlock::register(&mut store, "cb", 3, 4, &mut rng).unwrap();
    let err = fd_params(&store, FD_PROBES, &FD_STEPS_COMPOSITE, seed, |g, s| {
        let xv = g.constant(x.clone());
        let y = cb.forward(g, s, xv, Mode::Train)?;
        project(g, y, seed)
    });
    out.push(GradCase {
        name: "conv_block".into(),
        err,
        tol: COMPOSITE_TOL,
    });

    // naive models are frozen at their first estimate, as the difference
    // quotient must not re-estimate them
    let mut store = ParamStore::new();
    let basic = BasicNfaBlock::register(&mut store, "b", 3, 2, CovarianceForm::IndependentElliptical, 0, &mut rng)
        .unwrap();
    let mut ctx = ForwardCtx::train();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    basic.forward(&mut g, &mut store.clone(), xv, &mut ctx).unwrap();
    let frozen = ctx.models.clone();
    let err = fd_params(&store, FD_PROBES, &FD_STEPS_COMPOSITE, seed, |g, s| {
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, frozen.clone());
        let m = basic.forward(g, s, xv, &mut ctx)?;
        project(g, m.values, seed)
    });
    out.push(GradCase {
        name: "basic_nfa_block".into(),
        err,
        tol: COMPOSITE_TOL,
    });

    let mut store = ParamStore::new();
    let spatial = SpatialNfaBlock::register(&mut store, "s", 3, 2, 3, 1, CovarianceForm::Dense, 0, &mut rng).unwrap();
    if let Some(p) = store.get_mut("s.offset_bias") {
        for v in p.tensor.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let mut ctx = ForwardCtx::train();
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    spatial.forward(&mut g, &mut store.clone(), xv, &mut ctx).unwrap();
    let frozen = ctx.models.clone();
    let err = fd_params(&store, FD_PROBES, &FD_STEPS_COMPOSITE, seed, |g, s| {
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, frozen.clone());
        let m = spatial.forward(g, s, xv, &mut ctx)?;
        project(g, m.values, seed)
    });
    out.push(GradCase {
        name: "spatial_nfa_block".into(),
        err,
        tol: COMPOSITE_TOL,
    });

    let mut spatial_spec = NetworkSpec::default();
    spatial_spec.nfa.use_spatial = true;
    let mut dense = NetworkSpec::default();
    dense.nfa.form = CovarianceForm::Dense;
    dense.nfa.reduce = Reduce::Min;
    let mut single = NetworkSpec::default();
    single.nfa.form = CovarianceForm::Spherical;
    single.nfa.multiscale = false;
    single.nfa.use_eca = false;
    for (name, spec) in [
        ("network[nfa]", NetworkSpec::default()),
        ("network[nfa, spatial]", spatial_spec),
        ("network[nfa, dense, min]", dense),
        ("network[nfa, single scale]", single),
        ("network[plain]", NetworkSpec::plain()),
    ] {
        out.push(GradCase {
            name: name.into(),
            err: network_fd(&spec, seed),
            tol: COMPOSITE_TOL,
        });
    }
    out
}

/// Soft-IoU + TV of a whole network on a 16x16 image. Parameters the
/// initializer leaves at zero are randomized so every path is live.
pub fn network_fd(spec: &NetworkSpec, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1e7);
    let mut net = Network::new(spec, seed).unwrap();
    for p in net.params.iter_mut() {
        if p.tensor.data().iter().all(|&v| v == 0.0) {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let image = uniform([1, spec.in_channels, 16, 16], 0.0, 1.0, &mut rng);
    let mask = Tensor::from_fn([1, 1, 16, 16], |_, _, y, x| ((4..7).contains(&y) && (9..13).contains(&x)) as u8 as f64);
    let mut ctx = ForwardCtx::train();
    let mut g = Graph::new();
    let xv = g.constant(image.clone());
    net.clone().forward(&mut g, xv, &mut ctx).unwrap();
    let frozen = ctx.models.clone();
    let arch = net.arch.clone();
    fd_params(&net.params, FD_PROBES, &FD_STEPS_COMPOSITE, seed, |g, s| {
        let x = g.constant(image.clone());
        let y = g.constant(mask.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, frozen.clone());
        let o = arch.forward(g, s, x, &mut ctx)?;
        let l = g.soft_iou_loss(o.scores, y)?;
        let tv = g.tv_regularizer(o.scores);
        let tv = g.scale(tv, 0.05);
        g.add(l, tv)
    })
}

// ---------------------------------------------------------------------------
// quadrature

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// `ln ∫_x^∞ t^{a-1} e^{-t} dt` for `x > 0`, written as
/// `-x + ln ∫_0^∞ (x+s)^{a-1} e^{-s} ds` so large `x` does not underflow.
pub fn log_upper_gamma_quadrature(a: f64, x: f64) -> f64 {
    let scale = x.powf(a - 1.0);
    let f = |s: f64| ((x + s) / x).powf(a - 1.0) * (-s).exp();
    // past s = 80 + 2a the integrand is below e^-60 of its peak
    let hi = 80.0 + 4.0 * a;
    // coarse composite estimate sets the absolute tolerance
    let n = 2000;
    let dh = hi / n as f64;
    let coarse: f64 = (0..n)
        .map(|i| {
            let l = i as f64 * dh;
            dh / 6.0 * (f(l) + 4.0 * f(l + dh / 2.0) + f(l + dh))
        })
        .sum();
    let tol = 1e-13 * coarse;
    let mut total = 0.0;
    let mut lo = 0.0;
    // piecewise, so the adaptive rule sees the peak of (x+s)^{a-1}e^{-s}
    while lo < hi {
        let b = (lo + 4.0).min(hi);
        total += adaptive_simpson(&f, lo, b, tol);
        lo = b;
    }
    -x + scale.ln() + total.ln()
}

// ---------------------------------------------------------------------------
// components and matching

pub fn random_map(h: usize, w: usize, density: f64, rng: &mut ChaCha8Rng) -> BinaryMap {
    BinaryMap::new(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap()
}

/// 8-connected labeling by breadth-first flood fill, components numbered
/// in order of their first raster pixel.
pub fn flood_fill(map: &BinaryMap) -> Vec<Option<usize>> {
    let (h, w) = (map.h, map.w);
    let mut labels = vec![None; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !map.data[start] || labels[start].is_some() {
            continue;
        }
        let mut queue = VecDeque::from([start]);
        labels[start] = Some(next);
        while let Some(i) = queue.pop_front() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if map.data[j] && labels[j].is_none() {
                        labels[j] = Some(next);
                        queue.push_back(j);
                    }
                }
            }
        }
        next += 1;
    }
    labels
}

/// Pairwise IoU table computed from raw pixel lists.
pub fn iou_table(pred: &DetectionSet, gt: &DetectionSet) -> Vec<Vec<f64>> {
    pred.components
        .iter()
        .map(|p| {
            gt.components
                .iter()
                .map(|g| {
                    let inter = p.pixels.iter().filter(|i| g.pixels.contains(i)).count();
                    inter as f64 / (p.pixels.len() + g.pixels.len() - inter) as f64
                })
                .collect()
        })
        .collect()
}

/// Exhaustive one-to-one assignment over pairs with IoU ≥ `iou_min`,
/// keeping the assignment whose IoUs, sorted in decreasing order, are
/// lexicographically largest. Returns (TP, FP, FN).
pub fn exhaustive_assignment(iou: &[Vec<f64>], n_gt: usize, iou_min: f64) -> (usize, usize, usize) {
    fn go(p: usize, iou: &[Vec<f64>], used: &mut Vec<bool>, cur: &mut Vec<f64>, best: &mut Vec<f64>, iou_min: f64) {
        if p == iou.len() {
            let mut s = cur.clone();
            s.sort_by(|a, b| b.total_cmp(a));
            if lex_greater(&s, best) {
                *best = s;
            }
            return;
        }
        go(p + 1, iou, used, cur, best, iou_min);
        for g in 0..used.len() {
            if !used[g] && iou[p][g] >= iou_min && iou[p][g] > 0.0 {
                used[g] = true;
                cur.push(iou[p][g]);
                go(p + 1, iou, used, cur, best, iou_min);
                cur.pop();
                used[g] = false;
            }
        }
    }
    fn lex_greater(a: &[f64], b: &[f64]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x != y {
                return x > y;
            }
        }
        a.len() > b.len()
    }
    let mut best = Vec::new();
    go(0, iou, &mut vec![false; n_gt], &mut Vec::new(), &mut best, iou_min);
    let tp = best.len();
    (tp, iou.len() - tp, n_gt - tp)
}

/// Maximum number of pairs any one-to-one assignment can reach.
pub fn max_cardinality(iou: &[Vec<f64>], n_gt: usize, iou_min: f64) -> usize {
    fn go(p: usize, iou: &[Vec<f64>], used: &mut Vec<bool>, iou_min: f64) -> usize {
        if p == iou.len() {
            return 0;
        }
        let mut best = go(p + 1, iou, used, iou_min);
        for g in 0..used.len() {
            if !used[g] && iou[p][g] >= iou_min && iou[p][g] > 0.0 {
                used[g] = true;
                best = best.max(1 + go(p + 1, iou, used, iou_min));
                used[g] = false;
            }
        }
        best
    }
    go(0, iou, &mut vec![false; n_gt], iou_min)
}

/// A map of up to `max_objects` random rectangles and blobs.
pub fn random_objects(h: usize, w: usize, max_objects: usize, rng: &mut ChaCha8Rng) -> BinaryMap {
    let mut m = BinaryMap::empty(h, w);
    let n = rng.random_range(0..=max_objects);
    for _ in 0..n {
        let (bh, bw) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let (y0, x0) = (rng.random_range(0..h - bh + 1), rng.random_range(0..w - bw + 1));
        for y in y0..y0 + bh {
            for x in x0..x0 + bw {
                if bh * bw <= 2 || rng.random_bool(0.85) {
                    m.data[y * w + x] = true;
                }
            }
        }
    }
    m
}
