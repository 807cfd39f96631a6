//! Run configuration: one TOML file with a section per stage, plus flag
//! overrides.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use nfa_core::backbone::NetworkSpec;
use nfa_core::data::{Split, SyntheticConfig};
use nfa_core::eval::{EpsilonConfig, DEFAULT_BINS, DEFAULT_TOLERANCE_PX};
use nfa_core::nfa::CovarianceForm;
use nfa_core::numerics::Reduce;
use nfa_core::training::{AblationAxes, TrainConfig};

/// Failure with a machine-readable code, printed as `error[code]: ...`.
#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Manifest of image/mask pairs; without one the `[data]` generator
    /// runs in memory.
    pub manifest: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub checkpoint: Option<String>,
    /// Directory of score PNGs named after the samples, used instead of a
    /// checkpoint.
    pub scores: Option<String>,
    /// The head's default when absent.
    pub threshold: Option<f64>,
    pub tolerance_px: usize,
    pub bins: usize,
    /// Test split, falling back to validation then training data.
    pub split: Option<Split>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            checkpoint: None,
            scores: None,
            threshold: None,
            tolerance_px: DEFAULT_TOLERANCE_PX,
            bins: DEFAULT_BINS,
            split: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferSection {
    pub checkpoint: Option<String>,
    /// An image file or a manifest.
    pub input: Option<String>,
    /// Also dump raw significance maps.
    pub significance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub checkpoint: Option<String>,
    /// Slope to re-score with.
    pub alpha: f64,
    pub bins: usize,
    pub split: Option<Split>,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        CalibrateSection {
            checkpoint: None,
            alpha: 1e-3,
            bins: DEFAULT_BINS,
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurveSection {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    pub channels: usize,
    pub n_test: usize,
}

impl Default for CurveSection {
    fn default() -> Self {
        CurveSection {
            x_min: 0.0,
            x_max: 40.0,
            points: 401,
            channels: 1,
            n_test: 1,
        }
    }
}

impl CurveSection {
    pub fn xs(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.x_min];
        }
        let step = (self.x_max - self.x_min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.x_min + step * i as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub epsilon: EpsilonConfig,
    pub gradient_seed: u64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            epsilon: EpsilonConfig::default(),
            gradient_seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: String,
    pub data: SyntheticConfig,
    pub dataset: DatasetSection,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub infer: InferSection,
    pub ablate: AblationAxes,
    pub calibrate: CalibrateSection,
    pub curve: CurveSection,
    pub check: CheckSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: "runs/default".to_string(),
            data: SyntheticConfig::default(),
            dataset: DatasetSection::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            infer: InferSection::default(),
            ablate: AblationAxes::default(),
            calibrate: CalibrateSection::default(),
            curve: CurveSection::default(),
            check: CheckSection::default(),
        }
    }
}

impl RunConfig {
    /// A config with every optional key filled in, so that serializing it
    /// lists all accepted keys.
    fn key_template() -> Self {
        let mut c = RunConfig::default();
        let s = String::new;
        c.dataset.manifest = Some(s());
        c.train.threshold = Some(0.0);
        c.eval.checkpoint = Some(s());
        c.eval.scores = Some(s());
        c.eval.threshold = Some(0.0);
        c.eval.split = Some(Split::Test);
        c.infer.checkpoint = Some(s());
        c.infer.input = Some(s());
        c.calibrate.checkpoint = Some(s());
        c.calibrate.split = Some(Split::Test);
        c
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("io", format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::new("config", one_line(&e.to_string())))?;
        let template = toml::Table::try_from(Self::key_template())
            .map_err(|e| CliError::new("internal", e.to_string()))?;
        let mut unknown = BTreeSet::new();
        collect_unknown(&table, &template, "", &mut unknown);
        if !unknown.is_empty() {
            let keys: Vec<String> = unknown.into_iter().collect();
            return Err(CliError::new(
                "config",
                format!("unknown config keys: {}", keys.join(", ")),
            ));
        }
        toml::from_str(text).map_err(|e| CliError::new("config", one_line(&e.to_string())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out_dir)
    }
}

fn collect_unknown(user: &toml::Table, known: &toml::Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in user {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match (v, known.get(k)) {
            (_, None) => {
                out.insert(path);
            }
            (toml::Value::Table(u), Some(toml::Value::Table(kn))) => collect_unknown(u, kn, &path, out),
            _ => {}
        }
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn flag(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Spherical,
    Elliptical,
    Dense,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReduceArg {
    Min,
    Max,
}

/// Flags shared by every command; each one overrides a config key.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// TOML run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data generation, initialization and the epsilon check
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<String>,
    /// Binarization threshold for validation and evaluation
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Activation slope (the new slope for `calibrate`)
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub sigma_form: Option<FormArg>,
    #[arg(long, global = true, value_enum)]
    pub reduce: Option<ReduceArg>,
    #[arg(long, global = true, value_enum)]
    pub eca: Option<Toggle>,
    #[arg(long, global = true, value_enum)]
    pub spatial: Option<Toggle>,
    #[arg(long, global = true)]
    pub reg_weight: Option<f64>,
    /// Dataset manifest
    #[arg(long, global = true)]
    pub manifest: Option<String>,
    /// Checkpoint for infer, eval and calibrate
    #[arg(long, global = true)]
    pub checkpoint: Option<String>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig, calibrate: bool) {
        if let Some(s) = self.seed {
            cfg.data.seed = s;
            cfg.train.seed = s;
            cfg.check.epsilon.seed = s;
        }
        if let Some(d) = &self.out_dir {
            cfg.out_dir = d.clone();
        }
        if let Some(t) = self.threshold {
            cfg.train.threshold = Some(t);
            cfg.eval.threshold = Some(t);
        }
        if let Some(a) = self.alpha {
            if calibrate {
                cfg.calibrate.alpha = a;
            } else {
                cfg.network.nfa.alpha = a;
            }
        }
        if let Some(f) = self.sigma_form {
            cfg.network.nfa.form = match f {
                FormArg::Spherical => CovarianceForm::Spherical,
                FormArg::Elliptical => CovarianceForm::IndependentElliptical,
                FormArg::Dense => CovarianceForm::Dense,
            };
        }
        if let Some(r) = self.reduce {
            cfg.network.nfa.reduce = match r {
                ReduceArg::Min => Reduce::Min,
                ReduceArg::Max => Reduce::Max,
            };
        }
        if let Some(t) = self.eca {
            cfg.network.nfa.use_eca = t.flag();
        }
        if let Some(t) = self.spatial {
            cfg.network.nfa.use_spatial = t.flag();
        }
        if let Some(w) = self.reg_weight {
            cfg.network.nfa.reg_weight = w;
        }
        if let Some(m) = &self.manifest {
            cfg.dataset.manifest = Some(m.clone());
        }
        if let Some(c) = &self.checkpoint {
            cfg.eval.checkpoint = Some(c.clone());
            cfg.infer.checkpoint = Some(c.clone());
            cfg.calibrate.checkpoint = Some(c.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
    }
}
