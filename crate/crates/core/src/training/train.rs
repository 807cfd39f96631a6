//! The epoch loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Checkpoint, HeadKind, Network, NetworkSpec};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, object_ap, object_counts, BinaryMap, MetricsReport, ThresholdSweep, DEFAULT_IOU_MIN,
    NFA_THRESHOLD, PLAIN_THRESHOLD,
};
use crate::nfa::ForwardCtx;
use crate::numerics::{Graph, Mode, Tensor};
use crate::training::{adagrad_step, cosine_annealing, ADAGRAD_EPS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Floor of the cosine schedule.
    pub lr_min: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Random horizontal and vertical flips.
    pub flips: bool,
    /// Validation threshold; the head's default when absent.
    pub threshold: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.01,
            lr_min: 1e-5,
            batch_size: 4,
            seed: 0,
            flips: true,
            threshold: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.lr_min >= 0.0) || self.lr_min > self.lr {
            return Err(Error::param(format!(
                "learning rates must satisfy 0 <= lr_min <= lr, 0 < lr (got {} and {})",
                self.lr_min, self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// Weight of the smoothness term; the plain head trains on Soft-IoU alone.
pub fn regularizer_weight(spec: &NetworkSpec) -> f64 {
    match spec.head {
        HeadKind::Nfa => spec.nfa.reg_weight,
        HeadKind::Plain => 0.0,
    }
}

/// Default binarization threshold of a head.
pub fn default_threshold(head: HeadKind) -> f64 {
    match head {
        HeadKind::Nfa => NFA_THRESHOLD,
        HeadKind::Plain => PLAIN_THRESHOLD,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-image objective over the epoch.
    pub loss: f64,
    pub lr: f64,
    pub val_f1: f64,
    pub val_ap: f64,
}

pub fn write_log_csv(log: &[EpochLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,loss,lr,val_f1,val_ap")?;
    for e in log {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.loss, e.lr, e.val_f1, e.val_ap)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best validation F1 (first epoch wins ties).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Per-image scores in eval mode, each (1, 1, h, w). The naive model of
/// the NFA head is estimated from each image alone.
pub fn predict_all(net: &mut Network, samples: &[Sample]) -> Result<Vec<Tensor>> {
    samples
        .iter()
        .map(|s| Ok(net.predict(&s.image, Mode::Eval)?.scores))
        .collect()
}

pub fn masks_of(samples: &[Sample]) -> Result<Vec<BinaryMap>> {
    samples.iter().map(|s| BinaryMap::from_mask(&s.mask)).collect()
}

/// Metrics report of a network over `samples`.
pub fn evaluate_network(net: &mut Network, samples: &[Sample], threshold: f64, tol: usize) -> Result<MetricsReport> {
    let scores = predict_all(net, samples)?;
    evaluate(&scores, &masks_of(samples)?, threshold, tol)
}

fn validate(net: &mut Network, samples: &[Sample], threshold: f64) -> Result<(f64, f64)> {
    let scores = predict_all(net, samples)?;
    let gts = masks_of(samples)?;
    let counts = object_counts(&scores, &gts, threshold, DEFAULT_IOU_MIN)?;
    let ap = object_ap(&scores, &gts, ThresholdSweep::default(), DEFAULT_IOU_MIN)?;
    Ok((counts.f1(), ap))
}

fn batch_tensors(samples: &[&Sample], rng: &mut ChaCha8Rng, flips: bool) -> Result<(Tensor, Tensor)> {
    let mut images = Vec::with_capacity(samples.len());
    let mut masks = Vec::with_capacity(samples.len());
    for s in samples {
        let (mut img, mut mask) = (s.image.clone(), s.mask.clone());
        if flips {
            if rng.random_bool(0.5) {
                img = img.flip_horizontal();
                mask = mask.flip_horizontal();
            }
            if rng.random_bool(0.5) {
                img = img.flip_vertical();
                mask = mask.flip_vertical();
            }
        }
        images.push(img);
        masks.push(mask);
    }
    Ok((Tensor::stack_batch(&images)?, Tensor::stack_batch(&masks)?))
}

/// One optimization step on a batch; returns the batch objective.
pub fn train_step(net: &mut Network, images: Tensor, masks: Tensor, lr: f64, reg_weight: f64) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(images);
    let y = g.constant(masks);
    let mut ctx = ForwardCtx::train();
    let out = net.forward(&mut g, x, &mut ctx)?;
    let mut loss = g.soft_iou_loss(out.scores, y)?;
    if reg_weight > 0.0 {
        let tv = g.tv_regularizer(out.scores);
        let tv = g.scale(tv, reg_weight);
        loss = g.add(loss, tv)?;
    }
    let value = g.value(loss).item()?;
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {value}")));
    }
    net.params.zero_grad();
    g.backward(loss, &mut net.params)?;
    for p in net.params.iter() {
        if p.tensor.grad.as_ref().is_some_and(|gr| gr.iter().any(|v| !v.is_finite())) {
            return Err(Error::Numerical(format!("non-finite gradient in `{}`", p.name)));
        }
    }
    adagrad_step(&mut net.params, lr, ADAGRAD_EPS);
    Ok(value)
}

fn diagnostic(net: &Network, epoch: usize, batch: usize, err: Error) -> Error {
    match err {
        Error::Numerical(msg) => {
            let norms: Vec<String> = net
                .params
                .norms()
                .into_iter()
                .map(|(n, v)| format!("{n}={v:.4e}"))
                .collect();
            Error::Numerical(format!(
                "{msg} at epoch {epoch}, batch {batch}; parameter norms: {}",
                norms.join(", ")
            ))
        }
        other => other,
    }
}

/// Trains a freshly initialized network (seeded by `cfg.seed`).
pub fn train(spec: &NetworkSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = Network::new(spec, cfg.seed)?;
    train_network(net, data, cfg, |_| {})
}

/// Runs `cfg.epochs` epochs on `net`; `on_epoch` sees every log row as it
/// is produced.
pub fn train_network(
    mut net: Network,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::param("training split is empty"));
    }
    let reg_weight = regularizer_weight(net.spec());
    let threshold = cfg.threshold.unwrap_or_else(|| default_threshold(net.spec().head));
    let val: &[Sample] = if data.val.is_empty() { &data.train } else { &data.val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_7a1e);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best = Checkpoint {
        network: net.clone(),
        epoch: 0,
    };
    let mut best_f1 = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cosine_annealing(cfg.lr, cfg.lr_min, epoch - 1, cfg.epochs)?;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (images, masks) = batch_tensors(&batch, &mut rng, cfg.flips)?;
            total += train_step(&mut net, images, masks, lr, reg_weight)
                .map_err(|e| diagnostic(&net, epoch, b, e))?;
        }
        let (val_f1, val_ap) = validate(&mut net, val, threshold)?;
        let row = EpochLog {
            epoch,
            loss: total / data.train.len() as f64,
            lr,
            val_f1,
            val_ap,
        };
        on_epoch(&row);
        log.push(row);
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best = Checkpoint {
                network: net.clone(),
                epoch,
            };
        }
    }
    let last = Checkpoint {
        network: net,
        epoch: cfg.epochs,
    };
    Ok(TrainOutcome { best, last, log })
}
