use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use nfa_core::backbone::{Checkpoint, HeadKind, Network};
use nfa_core::checks::gradient_suite;
use nfa_core::data::{generate, read_image, synthesize, write_png16, Dataset, DatasetManifest, Sample};
use nfa_core::eval::{
    epsilon_meaningfulness_check, evaluate, nfa_curve, recalibrate, write_curve_csv, CalibrationReport,
};
use nfa_core::numerics::{Mode, Tensor};
use nfa_core::training::{
    default_threshold, evaluation_split, masks_of, predict_all, run_ablation, train_network, write_ablation_csv,
    write_log_csv,
};

use crate::config::{CliError, RunConfig};

#[derive(Serialize)]
struct RunDescriptor<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config: &'a RunConfig,
    rerun: String,
}

/// Writes `config.toml` (the resolved configuration) and `run.json`.
fn write_descriptor(command: &str, cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    let config_path = dir.join("config.toml");
    fs::write(&config_path, cfg.to_toml()).with_context(|| format!("writing {}", config_path.display()))?;
    let d = RunDescriptor {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.train.seed,
        config: cfg,
        rerun: format!("dnfa {command} --config {}", config_path.display()),
    };
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&d)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn required<'a>(value: &'a Option<String>, what: &str) -> Result<&'a str> {
    value
        .as_deref()
        .ok_or_else(|| CliError::new("config", format!("{what} is required")).into())
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.dataset.manifest {
        Some(m) => Ok(DatasetManifest::load(m)?.load_all()?),
        None => Ok(Dataset::from_samples(synthesize(&cfg.data)?)),
    }
}

fn pick_split(data: &Dataset, split: Option<nfa_core::data::Split>) -> Result<&[Sample]> {
    let samples = match split {
        Some(s) => data.split(s),
        None => evaluation_split(data),
    };
    if samples.is_empty() {
        return Err(CliError::new("parameter", "the selected split is empty").into());
    }
    Ok(samples)
}

fn load_network(path: &str) -> Result<Network> {
    Ok(Checkpoint::load(path)?.network)
}

pub fn dispatch(command: &str, cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    let run = |f: fn(&RunConfig, &Path) -> Result<()>| -> Result<()> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        f(cfg, &dir)?;
        write_descriptor(command, cfg)
    };
    match command {
        "generate" => {
            cfg.data.validate()?;
            run(cmd_generate)
        }
        "train" => {
            cfg.network.validate()?;
            cfg.train.validate()?;
            run(cmd_train)
        }
        "infer" => {
            required(&cfg.infer.checkpoint, "infer.checkpoint (--checkpoint)")?;
            required(&cfg.infer.input, "infer.input (--input)")?;
            run(cmd_infer)
        }
        "eval" => {
            if cfg.eval.checkpoint.is_none() && cfg.eval.scores.is_none() {
                return Err(CliError::new("config", "eval needs --checkpoint or --scores").into());
            }
            run(cmd_eval)
        }
        "ablate" => {
            cfg.network.validate()?;
            cfg.train.validate()?;
            run(cmd_ablate)
        }
        "calibrate" => {
            required(&cfg.calibrate.checkpoint, "calibrate.checkpoint (--checkpoint)")?;
            run(cmd_calibrate)
        }
        "nfa-curve" => run(cmd_curve),
        "check" => run(cmd_check),
        other => Err(CliError::new("usage", format!("unknown command {other}")).into()),
    }
}

fn cmd_generate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let (manifest, samples) = generate(&cfg.data, dir)?;
    let data = Dataset::from_samples(samples);
    println!(
        "wrote {} images ({} train, {} val, {} test), foreground fraction {:.5}",
        manifest.entries.len(),
        data.train.len(),
        data.val.len(),
        data.test.len(),
        data.foreground_fraction()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let net = Network::new(&cfg.network, cfg.train.seed)?;
    let outcome = train_network(net, &data, &cfg.train, |e| {
        println!(
            "epoch {:>4}  loss {:.5}  lr {:.3e}  val_f1 {:.4}  val_ap {:.4}",
            e.epoch, e.loss, e.lr, e.val_f1, e.val_ap
        );
    })?;
    outcome.best.save(dir.join("checkpoint.dnfa"))?;
    outcome.last.save(dir.join("last.dnfa"))?;
    let mut log = create(&dir.join("train_log.csv"))?;
    write_log_csv(&outcome.log, &mut log)?;
    log.flush()?;
    println!("best epoch {}", outcome.best.epoch);
    Ok(())
}

/// Raw significance dump: `u32` height, `u32` width, then `f32` values,
/// all little-endian.
fn write_significance(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let mut out = create(path)?;
    out.write_all(&(s.h as u32).to_le_bytes())?;
    out.write_all(&(s.w as u32).to_le_bytes())?;
    for v in t.data() {
        out.write_all(&(*v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_infer(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut net = load_network(required(&cfg.infer.checkpoint, "infer.checkpoint")?)?;
    let input = required(&cfg.infer.input, "infer.input")?;
    if cfg.infer.significance && net.spec().head == HeadKind::Plain {
        return Err(CliError::new("parameter", "a plain head has no significance map").into());
    }
    let images: Vec<(String, Tensor)> = if input.ends_with(".json") {
        let m = DatasetManifest::load(input)?;
        let data = m.load_all()?;
        data.train
            .into_iter()
            .chain(data.val)
            .chain(data.test)
            .map(|s| (s.name, s.image))
            .collect()
    } else {
        let p = PathBuf::from(input);
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        vec![(name, read_image(&p)?)]
    };
    let scores_dir = dir.join("scores");
    fs::create_dir_all(&scores_dir)?;
    let sig_dir = dir.join("significance");
    if cfg.infer.significance {
        fs::create_dir_all(&sig_dir)?;
    }
    for (name, image) in &images {
        let p = net.predict(image, Mode::Eval)?;
        write_png16(&scores_dir.join(format!("{name}.png")), &p.scores)?;
        if cfg.infer.significance {
            if let Some(s) = &p.significance {
                write_significance(&sig_dir.join(format!("{name}.sig")), s)?;
            }
        }
    }
    println!("wrote {} score maps to {}", images.len(), scores_dir.display());
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let samples = pick_split(&data, cfg.eval.split)?;
    let gts = masks_of(samples)?;
    let (scores, head) = match &cfg.eval.scores {
        Some(d) => {
            let d = PathBuf::from(d);
            let scores = samples
                .iter()
                .map(|s| read_image(&d.join(format!("{}.png", s.name))))
                .collect::<nfa_core::Result<Vec<_>>>()?;
            (scores, None)
        }
        None => {
            let mut net = load_network(required(&cfg.eval.checkpoint, "eval.checkpoint")?)?;
            let head = net.spec().head;
            (predict_all(&mut net, samples)?, Some(head))
        }
    };
    let threshold = cfg
        .eval
        .threshold
        .unwrap_or_else(|| default_threshold(head.unwrap_or(HeadKind::Plain)));
    let report = evaluate(&scores, &gts, threshold, cfg.eval.tolerance_px)?;
    fs::write(dir.join("metrics.json"), report.to_json()? + "\n")?;
    println!(
        "threshold {}  precision {:.4}  recall {:.4}  f1 {:.4}  ap {:.4}  fa/image {:.4}",
        threshold, report.object.precision, report.object.recall, report.object.f1, report.object.ap,
        report.object.fa_per_image
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let total = cfg.ablate.combinations();
    let mut done = 0;
    let rows = run_ablation(&cfg.network, &cfg.train, &data, &cfg.ablate, |r| {
        done += 1;
        println!(
            "[{done}/{total}] {} ms={} eca={} reg={} alpha={}  f1 {:.4}  ap {:.4}  frag {:.3}",
            r.form.name(),
            r.multiscale,
            r.eca,
            r.regularizer,
            r.alpha,
            r.f1,
            r.ap,
            r.fragmentation
        );
    })?;
    let mut out = create(&dir.join("ablation.csv"))?;
    write_ablation_csv(&rows, &mut out)?;
    out.flush()?;
    Ok(())
}

fn write_calibration_csv(before: &CalibrationReport, after: &CalibrationReport, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "bin,lo,hi,tp_before,fp_before,accuracy_before,tp_after,fp_after,accuracy_after")?;
    let bins = before.bins;
    let fmt = |a: Option<f64>| a.map_or(String::new(), |v| v.to_string());
    for b in 0..bins {
        writeln!(
            out,
            "{b},{},{},{},{},{},{},{},{}",
            b as f64 / bins as f64,
            (b + 1) as f64 / bins as f64,
            before.tp_hist[b],
            before.fp_hist[b],
            fmt(before.accuracy[b]),
            after.tp_hist[b],
            after.fp_hist[b],
            fmt(after.accuracy[b])
        )?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let mut net = load_network(required(&cfg.calibrate.checkpoint, "calibrate.checkpoint")?)?;
    if net.spec().head != HeadKind::Nfa {
        return Err(CliError::new("parameter", "calibrate needs a checkpoint with an NFA head").into());
    }
    let alpha = net.spec().nfa.alpha;
    let data = load_dataset(cfg)?;
    let samples = pick_split(&data, cfg.calibrate.split)?;
    let mut sig = Vec::with_capacity(samples.len());
    let mut n_test = 0;
    for s in samples {
        let p = net.predict(&s.image, Mode::Eval)?;
        n_test = p.n_test.unwrap_or(0);
        sig.push(p.significance.expect("NFA head yields significance"));
    }
    let gts = masks_of(samples)?;
    let (before, after) = recalibrate(&sig, &gts, n_test, alpha, cfg.calibrate.alpha, cfg.calibrate.bins)?;
    #[derive(Serialize)]
    struct Out<'a> {
        alpha: f64,
        alpha_new: f64,
        n_test: usize,
        before: &'a CalibrationReport,
        after: &'a CalibrationReport,
    }
    let json = serde_json::to_string_pretty(&Out {
        alpha,
        alpha_new: cfg.calibrate.alpha,
        n_test,
        before: &before,
        after: &after,
    })?;
    fs::write(dir.join("calibration.json"), json + "\n")?;
    write_calibration_csv(&before, &after, &dir.join("calibration.csv"))?;
    println!(
        "alpha {alpha} -> {}: occupied tp bins {} -> {}, extreme fraction {:.4} -> {:.4}",
        cfg.calibrate.alpha,
        before.occupied_tp_bins(),
        after.occupied_tp_bins(),
        before.extreme_fraction,
        after.extreme_fraction
    );
    Ok(())
}

fn cmd_curve(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let c = &cfg.curve;
    let rows = nfa_curve(&c.xs(), c.channels, c.n_test)?;
    let mut out = create(&dir.join("nfa_curve.csv"))?;
    write_curve_csv(&rows, &mut out)?;
    out.flush()?;
    println!("wrote {} rows", rows.len());
    Ok(())
}

fn cmd_check(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let eps = epsilon_meaningfulness_check(&cfg.check.epsilon)?;
    let mut ok = true;
    for r in &eps {
        println!(
            "epsilon {:>6}: mean false alarms {:.4} (se {:.4}, bound {:.4}) {}",
            r.epsilon,
            r.mean,
            r.std_err,
            r.bound,
            if r.holds { "ok" } else { "FAIL" }
        );
        ok &= r.holds;
    }
    let grads = gradient_suite(cfg.check.gradient_seed)?;
    for g in &grads {
        println!(
            "grad {:<34} max rel err {:.2e} (tol {:.0e}) {}",
            g.name,
            g.max_rel_err,
            g.tolerance,
            if g.passed { "ok" } else { "FAIL" }
        );
        ok &= g.passed;
    }
    #[derive(Serialize)]
    struct Out<'a> {
        passed: bool,
        epsilon: &'a [nfa_core::eval::EpsilonRow],
        gradients: &'a [nfa_core::checks::GradCheckEntry],
    }
    let json = serde_json::to_string_pretty(&Out {
        passed: ok,
        epsilon: &eps,
        gradients: &grads,
    })?;
    fs::write(dir.join("check.json"), json + "\n")?;
    if !ok {
        return Err(CliError::new("check", "one or more self-checks failed").into());
    }
    println!("all checks passed");
    Ok(())
}
