//! Parameterized building blocks: convolutions and conv-bn-relu blocks.
//!
//! A layer only remembers parameter names; the values live in a
//! [`ParamStore`] so that checkpoints and optimizers see one flat table.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Mode, ParamStore, Tensor, Var};

/// He (fan-in) normal initialization for a (c_out, c_in, k, k) kernel.
pub fn he_normal(c_out: usize, c_in: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / (c_in * k * k) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn([c_out, c_in, k, k], |_, _, _, _| normal.sample(rng))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: String,
    pub bias: Option<String>,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv {
    /// Registers `<prefix>.weight` (He init) and optionally a zero
    /// `<prefix>.bias`.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::param(format!("{prefix}: kernel size must be odd, got {k}")));
        }
        let weight = format!("{prefix}.weight");
        store.add(weight.clone(), he_normal(c_out, c_in, k, rng))?;
        let bias = if bias {
            let name = format!("{prefix}.bias");
            store.add(name.clone(), Tensor::zeros([1, c_out, 1, 1]))?;
            Some(name)
        } else {
            None
        };
        Ok(Conv {
            weight,
            bias,
            c_in,
            c_out,
            k,
        })
    }

    /// Shape-preserving (stride 1, same padding) convolution.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, &self.weight)?;
        let b = match &self.bias {
            Some(name) => Some(g.param(store, name)?),
            None => None,
        };
        g.conv2d(x, w, b, 1, (self.k - 1) / 2)
    }
}

/// `conv3x3 -> batch norm -> relu`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub gamma: String,
    pub beta: String,
    pub running: String,
}

impl ConvBlock {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        // the bias is redundant in front of batch norm
        let conv = Conv::register(store, &format!("{prefix}.conv"), c_in, c_out, 3, false, rng)?;
        let gamma = format!("{prefix}.bn.gamma");
        let beta = format!("{prefix}.bn.beta");
        let running = format!("{prefix}.bn.running");
        store.add(gamma.clone(), Tensor::full([1, c_out, 1, 1], 1.0))?;
        store.add(beta.clone(), Tensor::zeros([1, c_out, 1, 1]))?;
        let mut stats = vec![0.0; 2 * c_out];
        stats[c_out..].fill(1.0);
        store.set_buffer(running.clone(), stats);
        Ok(ConvBlock {
            conv,
            gamma,
            beta,
            running,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let y = self.conv.forward(g, store, x)?;
        let gamma = g.param(store, &self.gamma)?;
        let beta = g.param(store, &self.beta)?;
        let running = store.buffer_mut(&self.running).ok_or_else(|| {
            Error::param(format!("missing running statistics `{}`", self.running))
        })?;
        let y = g.batch_norm(y, gamma, beta, running, mode)?;
        Ok(g.relu(y))
    }

    /// Parameter names owned by this block.
    pub fn param_names(&self) -> Vec<&str> {
        vec![&self.conv.weight, &self.gamma, &self.beta]
    }
}
