//! Multi-scale fusion of significance maps and ECA scale weighting.

use crate::error::{Error, Result};
use crate::nfa::SignificanceMap;
use crate::numerics::{Graph, Reduce, Var};

/// Bilinearly upsamples a map to `(h, w)`; the number of tests is kept from
/// the source scale.
pub fn upsample_to(g: &mut Graph, map: SignificanceMap, h: usize, w: usize) -> Result<SignificanceMap> {
    let s = g.shape(map.values);
    if !h.is_multiple_of(s.h) || !w.is_multiple_of(s.w) || h / s.h != w / s.w {
        return Err(Error::param(format!(
            "cannot upsample a {}x{} map to {h}x{w} by a uniform factor",
            s.h, s.w
        )));
    }
    let values = g.upsample_bilinear(map.values, h / s.h)?;
    Ok(SignificanceMap { values, ..map })
}

/// Per-sample weights in (0, 1) for `m` maps of a common resolution: global
/// average pool of each map, a zero-padded 1D convolution across the `m`
/// pooled values, then a sigmoid. Returns (n, m, 1, 1).
pub fn eca_scale_weights(g: &mut Graph, maps: &[SignificanceMap], kernel: Var) -> Result<Var> {
    let stack = stack_maps(g, maps)?;
    let pooled = g.global_avg_pool(stack);
    let mixed = g.conv1d_channels(pooled, kernel)?;
    Ok(g.sigmoid(mixed))
}

fn stack_maps(g: &mut Graph, maps: &[SignificanceMap]) -> Result<Var> {
    let first = maps
        .first()
        .ok_or_else(|| Error::param("fusion needs at least one significance map"))?;
    let s0 = g.shape(first.values);
    for m in maps {
        let s = g.shape(m.values);
        if s != s0 {
            return Err(Error::param(format!(
                "significance maps must share a resolution: scale {} is {s}, scale {} is {s0}",
                m.scale_index, first.scale_index
            )));
        }
    }
    if maps.len() == 1 {
        return Ok(first.values);
    }
    let parts: Vec<Var> = maps.iter().map(|m| m.values).collect();
    g.concat_channels(&parts)
}

/// Per pixel `reduce_j w_j S_j`. Without weights every map counts fully; a
/// single unweighted map passes through untouched. The fused map carries
/// the number of tests of the finest scale.
pub fn fuse_scales(
    g: &mut Graph,
    maps: &[SignificanceMap],
    weights: Option<Var>,
    reduce: Reduce,
) -> Result<SignificanceMap> {
    let stack = stack_maps(g, maps)?;
    let finest = maps
        .iter()
        .min_by_key(|m| m.scale_index)
        .expect("non-empty");
    let stacked = match weights {
        Some(w) => {
            let ws = g.shape(w);
            if ws.c != maps.len() {
                return Err(Error::param(format!(
                    "{} fusion weights for {} maps",
                    ws.c,
                    maps.len()
                )));
            }
            g.scale_channels(stack, w)?
        }
        None if maps.len() == 1 => return Ok(*finest),
        None => stack,
    };
    let values = if maps.len() == 1 {
        stacked
    } else {
        g.channel_reduce(stacked, reduce)
    };
    Ok(SignificanceMap {
        values,
        scale_index: finest.scale_index,
        n_test: finest.n_test,
    })
}
