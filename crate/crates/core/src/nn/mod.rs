//! Minimal differentiable tensor engine used by every trainable component.

mod adam;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use adam::Adam;
pub use graph::{Gradients, Graph, Var};
pub use params::{he_normal, zeros_bias, zeros_weight, Param, ParamGroup, ParamId, ParamStore};
pub use tensor::Tensor;
