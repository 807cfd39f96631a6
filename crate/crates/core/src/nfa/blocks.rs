//! NFA blocks: learned features followed by the significance test.

use rand::Rng;

use crate::error::Result;
use crate::nfa::{significance, CovarianceForm, ForwardCtx, SignificanceMap};
use crate::numerics::layers::{Conv, ConvBlock};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// Two conv blocks producing `features` channels, then the significance of
/// each pixel under a naive model estimated from those channels.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicNfaBlock {
    pub first: ConvBlock,
    pub second: ConvBlock,
    pub form: CovarianceForm,
    pub scale_index: usize,
}

impl BasicNfaBlock {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        features: usize,
        form: CovarianceForm,
        scale_index: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let first = ConvBlock::register(store, &format!("{prefix}.block0"), c_in, features, rng)?;
        let second = ConvBlock::register(store, &format!("{prefix}.block1"), features, features, rng)?;
        Ok(BasicNfaBlock {
            first,
            second,
            form,
            scale_index,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<SignificanceMap> {
        let y = self.first.forward(g, store, x, ctx.mode)?;
        let y = self.second.forward(g, store, y, ctx.mode)?;
        let model = ctx.naive_model(g.value(y), self.form)?;
        significance(g, y, &model, self.scale_index)
    }
}

/// One conv block, then local window self-attention with q/k/v from 1x1
/// convolutions and a learned bias per window offset, then the significance
/// test.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialNfaBlock {
    pub block: ConvBlock,
    pub query: Conv,
    pub key: Conv,
    pub value: Conv,
    pub offset_bias: String,
    pub window: usize,
    pub heads: usize,
    pub form: CovarianceForm,
    pub scale_index: usize,
}

impl SpatialNfaBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        c_in: usize,
        features: usize,
        window: usize,
        heads: usize,
        form: CovarianceForm,
        scale_index: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if window == 0 || window.is_multiple_of(2) {
            return Err(crate::Error::param(format!(
                "attention window must be odd, got {window}"
            )));
        }
        let block = ConvBlock::register(store, &format!("{prefix}.block0"), c_in, features, rng)?;
        let query = Conv::register(store, &format!("{prefix}.query"), features, features, 1, true, rng)?;
        let key = Conv::register(store, &format!("{prefix}.key"), features, features, 1, true, rng)?;
        let value = Conv::register(store, &format!("{prefix}.value"), features, features, 1, true, rng)?;
        let offset_bias = format!("{prefix}.offset_bias");
        store.add(offset_bias.clone(), Tensor::zeros([1, 1, window, window]))?;
        Ok(SpatialNfaBlock {
            block,
            query,
            key,
            value,
            offset_bias,
            window,
            heads,
            form,
            scale_index,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: Var,
        ctx: &mut ForwardCtx,
    ) -> Result<SignificanceMap> {
        let y = self.block.forward(g, store, x, ctx.mode)?;
        let q = self.query.forward(g, store, y)?;
        let k = self.key.forward(g, store, y)?;
        let v = self.value.forward(g, store, y)?;
        let bias = g.param(store, &self.offset_bias)?;
        let att = g.window_attention(q, k, v, bias, self.window, self.heads)?;
        let model = ctx.naive_model(g.value(att), self.form)?;
        significance(g, att, &model, self.scale_index)
    }
}
