//! Differentiable substrate: tape autodiff, dense and causal layers, Adam.

pub mod adam;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::AdamState;
pub use layers::{step_inputs, CausalNet, Dense, Mlp};
pub use params::{Graph, ParamId, ParamStore, Tensor};
pub use tape::{Gradients, Tape, Var};
