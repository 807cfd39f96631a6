use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{HeadKind, NetworkSpec};
use crate::error::{Error, Result};
use crate::nfa::{
    eca_scale_weights, fuse_scales, upsample_to, ActivationConfig, BasicNfaBlock, ForwardCtx,
    SignificanceMap, SpatialNfaBlock,
};
use crate::numerics::layers::{Conv, ConvBlock};
use crate::numerics::{Graph, Mode, ParamStore, Tensor, Var};

/// Prefix of every head parameter.
pub const HEAD_PREFIX: &str = "head.";
/// Prefix of every trunk parameter.
pub const TRUNK_PREFIX: &str = "trunk.";

#[derive(Clone, Debug, PartialEq)]
enum Head {
    Plain(Conv),
    Nfa {
        basic: Vec<BasicNfaBlock>,
        spatial: Option<SpatialNfaBlock>,
        eca: Option<String>,
    },
}

/// Layer layout of a [`NetworkSpec`]; holds parameter names only.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    spec: NetworkSpec,
    encoder: Vec<[ConvBlock; 2]>,
    decoder: Vec<ConvBlock>,
    head: Head,
}

/// Everything a forward pass produces.
#[derive(Clone, Debug)]
pub struct NetworkOutput {
    /// (n, 1, h, w) scores in [0, 1).
    pub scores: Var,
    /// Per-block significance at full resolution, in block order.
    pub maps: Vec<SignificanceMap>,
    /// Fused significance before the activation.
    pub fused: Option<SignificanceMap>,
    /// (n, m, 1, 1) scale weights.
    pub scale_weights: Option<Var>,
}

impl Architecture {
    /// Registers all parameters of `spec` in `store`, drawing initial
    /// weights from `rng`.
    pub fn build(spec: &NetworkSpec, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let ch = &spec.channels;
        let mut encoder = Vec::with_capacity(spec.levels);
        for (l, &c) in ch.iter().enumerate() {
            let c_in = if l == 0 { spec.in_channels } else { ch[l - 1] };
            let a = ConvBlock::register(store, &format!("trunk.enc{l}.0"), c_in, c, rng)?;
            let b = ConvBlock::register(store, &format!("trunk.enc{l}.1"), c, c, rng)?;
            encoder.push([a, b]);
        }
        let mut decoder = Vec::new();
        for l in (0..spec.levels.saturating_sub(1)).rev() {
            decoder.push(ConvBlock::register(
                store,
                &format!("trunk.dec{l}"),
                ch[l + 1] + ch[l],
                ch[l],
                rng,
            )?);
        }
        let head = match spec.head {
            HeadKind::Plain => Head::Plain(Conv::register(store, "head.plain", ch[0], 1, 1, true, rng)?),
            HeadKind::Nfa => {
                let o = &spec.nfa;
                let mut basic = Vec::new();
                for s in 0..spec.nfa_scales() {
                    basic.push(BasicNfaBlock::register(
                        store,
                        &format!("head.nfa{s}"),
                        ch[s],
                        o.features,
                        o.form,
                        s,
                        rng,
                    )?);
                }
                let spatial = if o.use_spatial {
                    Some(SpatialNfaBlock::register(
                        store,
                        "head.spatial",
                        ch[0],
                        o.features,
                        o.window,
                        o.heads,
                        o.form,
                        0,
                        rng,
                    )?)
                } else {
                    None
                };
                let eca = if o.use_eca {
                    let name = "head.eca.kernel".to_string();
                    store.add(name.clone(), Tensor::zeros([1, 1, 1, o.eca_kernel]))?;
                    Some(name)
                } else {
                    None
                };
                Head::Nfa {
                    basic,
                    spatial,
                    eca,
                }
            }
        };
        Ok(Architecture {
            spec: spec.clone(),
            encoder,
            decoder,
            head,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Decoder features from finest to coarsest.
    fn trunk(&self, g: &mut Graph, store: &mut ParamStore, image: Var, mode: Mode) -> Result<Vec<Var>> {
        let s = g.shape(image);
        let d = self.spec.divisibility();
        if !s.h.is_multiple_of(d) || !s.w.is_multiple_of(d) || s.h == 0 || s.w == 0 {
            return Err(Error::param(format!(
                "input {}x{} must have sides divisible by {d} (2^(levels-1)) for {} levels",
                s.h, s.w, self.spec.levels
            )));
        }
        if s.c != self.spec.in_channels {
            return Err(Error::param(format!(
                "input has {} channels, network expects {}",
                s.c, self.spec.in_channels
            )));
        }
        let mut skips = Vec::with_capacity(self.spec.levels);
        let mut x = image;
        for (l, [a, b]) in self.encoder.iter().enumerate() {
            if l > 0 {
                x = g.maxpool2x2(x)?;
            }
            x = a.forward(g, store, x, mode)?;
            x = b.forward(g, store, x, mode)?;
            skips.push(x);
        }
        let mut decoded = vec![x];
        for block in &self.decoder {
            let l = skips.len() - 1 - decoded.len();
            let up = g.upsample_bilinear(x, 2)?;
            let cat = g.concat_channels(&[up, skips[l]])?;
            x = block.forward(g, store, cat, mode)?;
            decoded.push(x);
        }
        decoded.reverse();
        Ok(decoded)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        image: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<NetworkOutput> {
        let s = g.shape(image);
        let features = self.trunk(g, store, image, ctx.mode)?;
        match &self.head {
            Head::Plain(conv) => {
                let logits = conv.forward(g, store, features[0])?;
                Ok(NetworkOutput {
                    scores: g.sigmoid(logits),
                    maps: Vec::new(),
                    fused: None,
                    scale_weights: None,
                })
            }
            Head::Nfa {
                basic,
                spatial,
                eca,
            } => {
                let mut maps = Vec::new();
                for block in basic {
                    let m = block.forward(g, store, features[block.scale_index], ctx)?;
                    maps.push(upsample_to(g, m, s.h, s.w)?);
                }
                if let Some(block) = spatial {
                    let m = block.forward(g, store, features[0], ctx)?;
                    maps.push(m);
                }
                let weights = match eca {
                    Some(name) => {
                        let k = g.param(store, name)?;
                        Some(eca_scale_weights(g, &maps, k)?)
                    }
                    None => None,
                };
                let fused = fuse_scales(g, &maps, weights, self.spec.nfa.reduce)?;
                let cfg = ActivationConfig::new(self.spec.nfa.alpha, fused.n_test)?;
                let scores = g.sigm_alpha(fused.values, &cfg);
                Ok(NetworkOutput {
                    scores,
                    maps,
                    fused: Some(fused),
                    scale_weights: weights,
                })
            }
        }
    }
}

/// Scores and significance of one forward pass, off the tape.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub scores: Tensor,
    pub significance: Option<Tensor>,
    pub n_test: Option<usize>,
    pub scale_weights: Option<Vec<f64>>,
}

/// A network: layout plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: ParamStore,
    pub seed: u64,
}

impl Network {
    /// Deterministic He initialization from `seed`.
    pub fn new(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let arch = Architecture::build(spec, &mut params, &mut rng)?;
        Ok(Network { arch, params, seed })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.arch.spec()
    }

    pub fn forward(&mut self, g: &mut Graph, image: Var, ctx: &mut ForwardCtx) -> Result<NetworkOutput> {
        self.arch.forward(g, &mut self.params, image, ctx)
    }

    /// Inference on a batch (n, c, h, w); naive models come from the batch
    /// itself, so callers wanting per-image statistics pass one image.
    pub fn predict(&mut self, images: &Tensor, mode: Mode) -> Result<Prediction> {
        let mut g = Graph::new();
        let x = g.constant(images.clone());
        let mut ctx = ForwardCtx::new(mode);
        let out = self.forward(&mut g, x, &mut ctx)?;
        Ok(Prediction {
            scores: g.value(out.scores).clone(),
            significance: out.fused.map(|f| g.value(f.values).clone()),
            n_test: out.fused.map(|f| f.n_test),
            scale_weights: out.scale_weights.map(|w| g.value(w).data().to_vec()),
        })
    }

    pub fn trunk_param_count(&self) -> usize {
        self.params.num_scalars_with_prefix(TRUNK_PREFIX)
    }

    pub fn head_param_count(&self) -> usize {
        self.params.num_scalars_with_prefix(HEAD_PREFIX)
    }
}
