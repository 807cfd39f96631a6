//! A trainable *a contrario* decision layer for small-object segmentation.
//!
//! Feature maps are scored against a Gaussian background model through the
//! number of false alarms (NFA), computed in log space as a significance
//! map, fused across decoder scales and squashed into segmentation scores.
//!
//! Module map:
//! - [`numerics`]: tensors, reverse-mode tape, convolution/normalization/attention ops
//! - [`special`]: log-space gamma and upper incomplete gamma
//! - [`nfa`]: naive-model estimation, significance, `sigm_alpha`, NFA blocks, fusion
//! - [`backbone`]: U-shaped network hosting the NFA head, checkpoints
//! - [`training`]: losses, Adagrad, cosine schedule, the epoch loop, ablations
//! - [`data`]: synthetic generators and manifest-based loading
//! - [`eval`]: components, matching, metrics, calibration, NFA diagnostics
//! - [`checks`]: gradient self-checks

// `!(x > 0.0)` rejects NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod checks;
pub mod data;
pub mod error;
pub mod eval;
pub mod nfa;
pub mod numerics;
pub mod special;
pub mod training;

pub use error::{Error, Result};
