//! U-shaped segmentation network hosting the NFA head, and its checkpoints.
//!
//! Encoder level `l` runs two conv-bn-relu blocks (after a 2x2 max pool for
//! `l > 0`); each decoder level upsamples, concatenates the skip and runs
//! one conv-bn-relu block. The NFA head places a basic NFA block on every
//! decoder scale (or the finest only), upsamples the significance maps to
//! input resolution, optionally weights them with ECA, fuses them and
//! applies `sigm_α`. The plain head is a 1x1 convolution and a sigmoid.

mod checkpoint;
mod network;
mod spec;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use network::{Architecture, Network, NetworkOutput, Prediction, HEAD_PREFIX, TRUNK_PREFIX};
pub use spec::{HeadKind, NetworkSpec, NfaOptions};
