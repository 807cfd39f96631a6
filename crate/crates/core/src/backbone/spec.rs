use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nfa::CovarianceForm;
use crate::numerics::Reduce;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Nfa,
    Plain,
}

impl HeadKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nfa" => Ok(HeadKind::Nfa),
            "plain" => Ok(HeadKind::Plain),
            other => Err(Error::param(format!("unknown head `{other}` (expected nfa|plain)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Nfa => "nfa",
            HeadKind::Plain => "plain",
        }
    }
}

/// Options of the NFA head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NfaOptions {
    pub form: CovarianceForm,
    /// Channels K fed to each significance test.
    pub features: usize,
    /// One NFA block per decoder scale; otherwise only the finest.
    pub multiscale: bool,
    pub use_eca: bool,
    pub use_spatial: bool,
    pub reduce: Reduce,
    pub alpha: f64,
    pub reg_weight: f64,
    pub window: usize,
    pub heads: usize,
    pub eca_kernel: usize,
}

impl Default for NfaOptions {
    fn default() -> Self {
        NfaOptions {
            form: CovarianceForm::IndependentElliptical,
            features: 2,
            multiscale: true,
            use_eca: true,
            use_spatial: false,
            reduce: Reduce::Max,
            alpha: 0.0005,
            reg_weight: 0.05,
            window: 7,
            heads: 1,
            eca_kernel: 3,
        }
    }
}

/// Architecture of the U-shaped network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub levels: usize,
    pub channels: Vec<usize>,
    pub head: HeadKind,
    pub nfa: NfaOptions,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            in_channels: 1,
            levels: 3,
            channels: vec![8, 16, 32],
            head: HeadKind::Nfa,
            nfa: NfaOptions::default(),
        }
    }
}

impl NetworkSpec {
    pub fn plain() -> Self {
        NetworkSpec {
            head: HeadKind::Plain,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(Error::param("in_channels must be at least 1"));
        }
        if self.levels == 0 {
            return Err(Error::param("levels must be at least 1"));
        }
        if self.channels.len() != self.levels {
            return Err(Error::param(format!(
                "channels lists {} widths for {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::param("channel widths must be positive"));
        }
        let o = &self.nfa;
        if o.features == 0 {
            return Err(Error::param("nfa features must be at least 1"));
        }
        if !(o.alpha > 0.0) || !o.alpha.is_finite() {
            return Err(Error::param(format!("alpha must be positive, got {}", o.alpha)));
        }
        if !(o.reg_weight >= 0.0) || !o.reg_weight.is_finite() {
            return Err(Error::param(format!(
                "reg_weight must be non-negative, got {}",
                o.reg_weight
            )));
        }
        if o.window == 0 || o.window.is_multiple_of(2) {
            return Err(Error::param(format!("attention window must be odd, got {}", o.window)));
        }
        if o.heads == 0 || !o.features.is_multiple_of(o.heads) {
            return Err(Error::param(format!(
                "{} attention heads do not divide {} features",
                o.heads, o.features
            )));
        }
        if o.eca_kernel == 0 || o.eca_kernel.is_multiple_of(2) {
            return Err(Error::param(format!("ECA kernel must be odd, got {}", o.eca_kernel)));
        }
        Ok(())
    }

    /// Input sides must be multiples of this.
    pub fn divisibility(&self) -> usize {
        1 << (self.levels - 1)
    }

    /// Decoder scales that carry an NFA block.
    pub fn nfa_scales(&self) -> usize {
        if self.nfa.multiscale {
            self.levels
        } else {
            1
        }
    }
}
