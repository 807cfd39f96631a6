//! Tensors, the autodiff tape and the network primitives built on it.

mod attention;
mod conv;
mod elementwise;
pub mod gradcheck;
mod graph;
pub mod layers;
mod norm;
mod params;
mod resample;
mod tensor;

pub use elementwise::Reduce;
pub(crate) use elementwise::sigmoid_scalar;
pub use graph::{BackwardCtx, BackwardFn, Graph, Var};
pub use norm::{Mode, BN_EPS, BN_MOMENTUM};
pub use params::{ParamStore, Parameter};
pub use tensor::{Shape, Tensor};
