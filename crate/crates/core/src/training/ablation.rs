//! The ablation matrix: every combination of covariance form, multiscale,
//! ECA, regularizer and α trained from the same seed.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backbone::{HeadKind, NetworkSpec, NfaOptions};
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{fragmentation, object_metrics, BinaryMap, DEFAULT_IOU_MIN};
use crate::nfa::CovarianceForm;
use crate::numerics::Tensor;
use crate::training::{default_threshold, masks_of, predict_all, train, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationAxes {
    pub forms: Vec<CovarianceForm>,
    pub multiscale: Vec<bool>,
    pub eca: Vec<bool>,
    pub regularizer: Vec<bool>,
    pub alphas: Vec<f64>,
}

impl Default for AblationAxes {
    fn default() -> Self {
        AblationAxes {
            forms: CovarianceForm::ALL.to_vec(),
            multiscale: vec![true, false],
            eca: vec![true, false],
            regularizer: vec![true, false],
            alphas: vec![1e-4, 5e-4, 1e-3],
        }
    }
}

impl AblationAxes {
    pub fn combinations(&self) -> usize {
        self.forms.len() * self.multiscale.len() * self.eca.len() * self.regularizer.len() * self.alphas.len()
    }

    /// Network specs of every combination, in row order.
    pub fn specs(&self, base: &NetworkSpec) -> Vec<NetworkSpec> {
        let reg_on = if base.nfa.reg_weight > 0.0 {
            base.nfa.reg_weight
        } else {
            NfaOptions::default().reg_weight
        };
        let mut out = Vec::with_capacity(self.combinations());
        for &form in &self.forms {
            for &multiscale in &self.multiscale {
                for &use_eca in &self.eca {
                    for &reg in &self.regularizer {
                        for &alpha in &self.alphas {
                            let mut s = base.clone();
                            s.head = HeadKind::Nfa;
                            s.nfa.form = form;
                            s.nfa.multiscale = multiscale;
                            s.nfa.use_eca = use_eca;
                            s.nfa.reg_weight = if reg { reg_on } else { 0.0 };
                            s.nfa.alpha = alpha;
                            out.push(s);
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub form: CovarianceForm,
    pub multiscale: bool,
    pub eca: bool,
    pub regularizer: bool,
    pub alpha: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap: f64,
    pub fa_per_image: f64,
    /// See [`object_fragmentation`].
    pub fragmentation: f64,
}

/// Quantiles of each image's object-pixel scores used as "high"
/// thresholds when measuring fragmentation.
pub const FRAGMENTATION_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];

/// Fragmentation as the threshold rises through the objects' own score
/// range: for every image with foreground and every quantile `q`, the
/// threshold is the `q`-quantile of the scores on mask pixels. Returns the
/// mean over the (image, quantile) pairs that touch an object, 0 if none.
pub fn object_fragmentation(scores: &[Tensor], gts: &[BinaryMap]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (s, g) in scores.iter().zip(gts) {
        let mut fg: Vec<f64> = s
            .data()
            .iter()
            .zip(&g.data)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect();
        if fg.is_empty() {
            continue;
        }
        fg.sort_by(f64::total_cmp);
        for q in FRAGMENTATION_QUANTILES {
            let t = fg[((fg.len() - 1) as f64 * q).floor() as usize];
            let f = fragmentation(std::slice::from_ref(s), std::slice::from_ref(g), t)?;
            if f > 0.0 {
                sum += f;
                n += 1;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Test samples, falling back to validation then training data.
pub fn evaluation_split(data: &Dataset) -> &[Sample] {
    if !data.test.is_empty() {
        &data.test
    } else if !data.val.is_empty() {
        &data.val
    } else {
        &data.train
    }
}

/// Trains and evaluates every combination; `on_row` sees each row as it
/// completes.
pub fn run_ablation(
    base: &NetworkSpec,
    cfg: &TrainConfig,
    data: &Dataset,
    axes: &AblationAxes,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if axes.combinations() == 0 {
        return Err(Error::param("ablation matrix has an empty axis"));
    }
    let eval_set = evaluation_split(data);
    let gts = masks_of(eval_set)?;
    let mut rows = Vec::with_capacity(axes.combinations());
    for spec in axes.specs(base) {
        spec.validate()?;
        let mut outcome = train(&spec, data, cfg)?;
        let t = cfg.threshold.unwrap_or_else(|| default_threshold(spec.head));
        let scores = predict_all(&mut outcome.best.network, eval_set)?;
        let m = object_metrics(&scores, &gts, t, DEFAULT_IOU_MIN)?;
        let frag = object_fragmentation(&scores, &gts)?;
        let row = AblationRow {
            form: spec.nfa.form,
            multiscale: spec.nfa.multiscale,
            eca: spec.nfa.use_eca,
            regularizer: spec.nfa.reg_weight > 0.0,
            alpha: spec.nfa.alpha,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            ap: m.ap,
            fa_per_image: m.fa_per_image,
            fragmentation: frag,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "form,multiscale,eca,regularizer,alpha,precision,recall,f1,ap,fa_per_image,fragmentation"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.form.name(),
            r.multiscale,
            r.eca,
            r.regularizer,
            r.alpha,
            r.precision,
            r.recall,
            r.f1,
            r.ap,
            r.fa_per_image,
            r.fragmentation
        )?;
    }
    Ok(())
}
