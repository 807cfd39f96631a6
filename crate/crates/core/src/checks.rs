//! Self-checks run by `dnfa check`: finite-difference gradient checks of
//! every differentiable operation and of whole networks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Network, NetworkSpec};
use crate::error::Result;
use crate::nfa::{
    eca_scale_weights, fuse_scales, significance, ActivationConfig, BasicNfaBlock, CovarianceForm, ForwardCtx,
    NaiveModel, SignificanceMap, SpatialNfaBlock,
};
use crate::numerics::gradcheck::{check_inputs, check_params, random_tensor, weighted_sum, GradCheckReport};
use crate::numerics::layers::ConvBlock;
use crate::numerics::{Graph, Mode, ParamStore, Reduce, Tensor, Var};

/// Tolerance for single operations.
pub const PRIMITIVE_TOL: f64 = 1e-4;
/// Tolerance for blocks and whole networks.
pub const COMPOSITE_TOL: f64 = 1e-3;

const STEP: f64 = 1e-6;
const PROBES: usize = 12;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn entry(name: &str, report: GradCheckReport, tolerance: f64) -> GradCheckEntry {
    GradCheckEntry {
        name: name.to_string(),
        probes: report.probes.len(),
        max_rel_err: report.max_rel_err(),
        tolerance,
        passed: report.passes(tolerance),
    }
}

/// Values in `±[0.2, 1)`, away from the kinks of relu and max.
fn signed(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.random_range(0.2..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Two-channel features whose half squared norm sits in [30, 50], so a
/// unit spherical model puts every pixel near the u = 40 branch point.
pub fn features_near_branch(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    let plane = shape[2] * shape[3];
    let c = shape[1];
    for n in 0..shape[0] {
        for p in 0..plane {
            let radius = (2.0 * rng.random_range(30.0..50.0f64)).sqrt();
            let mut dir: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            for d in &mut dir {
                *d *= radius / norm;
            }
            for (ch, d) in dir.into_iter().enumerate() {
                t.data_mut()[(n * c + ch) * plane + p] = d;
            }
        }
    }
    t
}

fn naive_models(k: usize, n_test: usize) -> Result<Vec<(CovarianceForm, NaiveModel)>> {
    let center = vec![0.1; k];
    let delta: Vec<f64> = (0..k).map(|i| if i % 2 == 0 { 2.0 } else { 0.5 }).collect();
    let mut sigma = DMatrix::identity(k, k) * 1.2;
    for i in 0..k.saturating_sub(1) {
        sigma[(i, i + 1)] = 0.3;
        sigma[(i + 1, i)] = 0.3;
    }
    Ok(vec![
        (CovarianceForm::Spherical, NaiveModel::spherical(center.clone(), 1.0, n_test)?),
        (
            CovarianceForm::IndependentElliptical,
            NaiveModel::independent(center.clone(), 0.9, delta, n_test)?,
        ),
        (CovarianceForm::Dense, NaiveModel::dense(center, sigma, n_test)?),
    ])
}

fn primitives(seed: u64, out: &mut Vec<GradCheckEntry>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = signed([2, 3, 4, 4], &mut rng);
    let b = signed([2, 3, 4, 4], &mut rng);
    let mut unary = |name: &str, f: fn(&mut Graph, Var) -> Result<Var>, x: &Tensor| -> Result<()> {
        let r = check_inputs(std::slice::from_ref(x), PROBES, STEP, seed, |g, v| {
            let y = f(g, v[0])?;
            weighted_sum(g, y, seed)
        })?;
        out.push(entry(name, r, PRIMITIVE_TOL));
        Ok(())
    };
    unary("relu", |g, x| Ok(g.relu(x)), &a)?;
    unary("sigmoid", |g, x| Ok(g.sigmoid(x)), &a)?;
    unary("scale", |g, x| Ok(g.scale(x, -1.7)), &a)?;
    unary("add_scalar", |g, x| Ok(g.add_scalar(x, 0.3)), &a)?;
    unary("mean", |g, x| Ok(g.mean(x)), &a)?;
    unary("select_channel", |g, x| g.select_channel(x, 1), &a)?;
    unary("channel_reduce_max", |g, x| Ok(g.channel_reduce(x, Reduce::Max)), &a)?;
    unary("channel_reduce_min", |g, x| Ok(g.channel_reduce(x, Reduce::Min)), &a)?;
    unary("maxpool2x2", |g, x| g.maxpool2x2(x), &a)?;
    unary("global_avg_pool", |g, x| Ok(g.global_avg_pool(x)), &a)?;
    unary("upsample_bilinear", |g, x| g.upsample_bilinear(x, 2), &a)?;
    unary("tv_regularizer", |g, x| Ok(g.tv_regularizer(x)), &a)?;

    let pair = [a.clone(), b.clone()];
    let mut binary = |name: &str, f: fn(&mut Graph, Var, Var) -> Result<Var>, xs: &[Tensor]| -> Result<()> {
        let r = check_inputs(xs, PROBES, STEP, seed, |g, v| {
            let y = f(g, v[0], v[1])?;
            weighted_sum(g, y, seed)
        })?;
        out.push(entry(name, r, PRIMITIVE_TOL));
        Ok(())
    };
    binary("add", |g, x, y| g.add(x, y), &pair)?;
    binary("sub", |g, x, y| g.sub(x, y), &pair)?;
    binary("mul", |g, x, y| g.mul(x, y), &pair)?;
    binary("concat_channels", |g, x, y| g.concat_channels(&[x, y]), &pair)?;
    let w = random_tensor([2, 3, 1, 1], 0.2, 1.5, &mut rng);
    binary("scale_channels", |g, x, y| g.scale_channels(x, y), &[a.clone(), w])?;
    let pooled = signed([2, 4, 1, 1], &mut rng);
    let kernel = signed([1, 1, 1, 3], &mut rng);
    binary("conv1d_channels", |g, x, k| g.conv1d_channels(x, k), &[pooled, kernel])?;

    let pred = random_tensor([2, 1, 5, 5], 0.05, 0.95, &mut rng);
    let target = Tensor::from_fn([2, 1, 5, 5], |n, _, y, x| if (y + x + n) % 3 == 0 { 1.0 } else { 0.0 });
    let r = check_inputs(&[pred], PROBES, STEP, seed, |g, v| {
        let t = g.constant(target.clone());
        g.soft_iou_loss(v[0], t)
    })?;
    out.push(entry("soft_iou_loss", r, PRIMITIVE_TOL));

    let x = signed([1, 2, 5, 5], &mut rng);
    let wt = signed([3, 2, 3, 3], &mut rng);
    let bias = signed([1, 3, 1, 1], &mut rng);
    for (name, stride, pad) in [("conv2d", 1, 1), ("conv2d_stride2", 2, 1), ("conv2d_valid", 1, 0)] {
        let r = check_inputs(&[x.clone(), wt.clone(), bias.clone()], PROBES, STEP, seed, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            weighted_sum(g, y, seed)
        })?;
        out.push(entry(name, r, PRIMITIVE_TOL));
    }

    let gamma = random_tensor([1, 3, 1, 1], 0.5, 1.5, &mut rng);
    let beta = signed([1, 3, 1, 1], &mut rng);
    for (name, mode) in [("batch_norm_train", Mode::Train), ("batch_norm_eval", Mode::Eval)] {
        let r = check_inputs(&[a.clone(), gamma.clone(), beta.clone()], PROBES, STEP, seed, |g, v| {
            let mut running = vec![0.1, -0.2, 0.3, 1.5, 0.7, 1.1];
            let y = g.batch_norm(v[0], v[1], v[2], &mut running, mode)?;
            weighted_sum(g, y, seed)
        })?;
        out.push(entry(name, r, PRIMITIVE_TOL));
    }

    let qkv: Vec<Tensor> = (0..3).map(|_| signed([1, 2, 5, 6], &mut rng)).collect();
    let offsets = signed([1, 1, 1, 9], &mut rng);
    let mut inputs = qkv;
    inputs.push(offsets);
    let r = check_inputs(&inputs, PROBES, STEP, seed, |g, v| {
        let y = g.window_attention(v[0], v[1], v[2], v[3], 3, 2)?;
        weighted_sum(g, y, seed)
    })?;
    out.push(entry("window_attention", r, PRIMITIVE_TOL));

    // significance on both sides of the asymptotic branch
    let near = features_near_branch([1, 2, 4, 4], &mut rng);
    let small = signed([1, 2, 4, 4], &mut rng);
    for (form, model) in naive_models(2, 16)? {
        for (tag, feats) in [("branch", &near), ("small_u", &small)] {
            let r = check_inputs(std::slice::from_ref(feats), PROBES, STEP, seed, |g, v| {
                let s = significance(g, v[0], &model, 0)?;
                weighted_sum(g, s.values, seed)
            })?;
            out.push(entry(&format!("significance_{}_{tag}", form.name()), r, PRIMITIVE_TOL));
        }
    }

    let sig = random_tensor([1, 1, 4, 4], -2.0, 3000.0, &mut rng);
    let cfg = ActivationConfig::new(0.0005, 16)?;
    let r = check_inputs(&[sig], PROBES, STEP, seed, |g, v| {
        let y = g.sigm_alpha(v[0], &cfg);
        weighted_sum(g, y, seed)
    })?;
    out.push(entry("sigm_alpha", r, PRIMITIVE_TOL));

    let maps: Vec<Tensor> = (0..3).map(|_| random_tensor([2, 1, 4, 4], -2.0, 5.0, &mut rng)).collect();
    let eca = signed([1, 1, 1, 3], &mut rng);
    let mut inputs = maps;
    inputs.push(eca);
    let r = check_inputs(&inputs, PROBES, STEP, seed, |g, v| {
        let maps: Vec<SignificanceMap> = (0..3)
            .map(|i| SignificanceMap {
                values: v[i],
                scale_index: i,
                n_test: 16,
            })
            .collect();
        let w = eca_scale_weights(g, &maps, v[3])?;
        let fused = fuse_scales(g, &maps, Some(w), Reduce::Max)?;
        weighted_sum(g, fused.values, seed)
    })?;
    out.push(entry("eca_fuse_scales", r, PRIMITIVE_TOL));
    Ok(())
}

fn blocks(seed: u64, out: &mut Vec<GradCheckEntry>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb10c);
    let x = signed([2, 3, 6, 6], &mut rng);

    let mut store = ParamStore::new();
    let cb = ConvBlock::register(&mut store, "cb", 3, 4, &mut rng)?;
    let r = check_params(&store, PROBES, STEP, seed, |g, s| {
        let xv = g.constant(x.clone());
        let y = cb.forward(g, s, xv, Mode::Train)?;
        let y = g.sum(y);
        Ok(y)
    })?;
    out.push(entry("conv_block", r, COMPOSITE_TOL));

    let mut store = ParamStore::new();
    let basic = BasicNfaBlock::register(&mut store, "basic", 3, 2, CovarianceForm::IndependentElliptical, 0, &mut rng)?;
    let mut ctx = ForwardCtx::train();
    {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        basic.forward(&mut g, &mut store.clone(), xv, &mut ctx)?;
    }
    let models = ctx.models.clone();
    let r = check_params(&store, PROBES, STEP, seed, |g, s| {
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, models.clone());
        let m = basic.forward(g, s, xv, &mut ctx)?;
        weighted_sum(g, m.values, seed)
    })?;
    out.push(entry("basic_nfa_block", r, COMPOSITE_TOL));

    let mut store = ParamStore::new();
    let spatial = SpatialNfaBlock::register(&mut store, "spatial", 3, 2, 3, 1, CovarianceForm::Dense, 0, &mut rng)?;
    // non-zero positional bias so the offset gradient is exercised
    if let Some(p) = store.get_mut("spatial.offset_bias") {
        for v in p.tensor.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let mut ctx = ForwardCtx::train();
    {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        spatial.forward(&mut g, &mut store.clone(), xv, &mut ctx)?;
    }
    let models = ctx.models.clone();
    let r = check_params(&store, PROBES, STEP, seed, |g, s| {
        let xv = g.constant(x.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, models.clone());
        let m = spatial.forward(g, s, xv, &mut ctx)?;
        weighted_sum(g, m.values, seed)
    })?;
    out.push(entry("spatial_nfa_block", r, COMPOSITE_TOL));
    Ok(())
}

/// Soft-IoU plus total variation of a whole network on one 16x16 image.
pub fn full_model_check(spec: &NetworkSpec, seed: u64, probes: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf011);
    let mut net = Network::new(spec, seed)?;
    // perturb the zero-initialized ECA kernel so its gradient path is live
    for p in net.params.iter_mut() {
        if p.tensor.data().iter().all(|&v| v == 0.0) {
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }
    let image = random_tensor([1, spec.in_channels, 16, 16], 0.0, 1.0, &mut rng);
    let mask = Tensor::from_fn([1, 1, 16, 16], |_, _, y, x| {
        if (5..8).contains(&y) && (9..12).contains(&x) {
            1.0
        } else {
            0.0
        }
    });
    let mut ctx = ForwardCtx::train();
    {
        let mut g = Graph::new();
        let x = g.constant(image.clone());
        net.clone().forward(&mut g, x, &mut ctx)?;
    }
    let models = ctx.models.clone();
    let arch = net.arch.clone();
    check_params(&net.params, probes, STEP, seed, |g, s| {
        let x = g.constant(image.clone());
        let y = g.constant(mask.clone());
        let mut ctx = ForwardCtx::replay(Mode::Train, models.clone());
        let o = arch.forward(g, s, x, &mut ctx)?;
        let l = g.soft_iou_loss(o.scores, y)?;
        let tv = g.tv_regularizer(o.scores);
        g.add(l, tv)
    })
}

fn networks(seed: u64, out: &mut Vec<GradCheckEntry>) -> Result<()> {
    let mut spatial = NetworkSpec::default();
    spatial.nfa.use_spatial = true;
    let mut dense = NetworkSpec::default();
    dense.nfa.form = CovarianceForm::Dense;
    dense.nfa.reduce = Reduce::Min;
    let specs = [
        ("network_nfa", NetworkSpec::default()),
        ("network_nfa_spatial", spatial),
        ("network_nfa_dense_min", dense),
        ("network_plain", NetworkSpec::plain()),
    ];
    for (name, spec) in specs {
        let r = full_model_check(&spec, seed, PROBES)?;
        out.push(entry(name, r, COMPOSITE_TOL));
    }
    Ok(())
}

/// Every gradient check, primitives first.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckEntry>> {
    let mut out = Vec::new();
    primitives(seed, &mut out)?;
    blocks(seed, &mut out)?;
    networks(seed, &mut out)?;
    Ok(out)
}
