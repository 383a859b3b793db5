//! Dense `f64` tensors, reverse-mode differentiation, Adam, seeded RNG and
//! checkpoints: everything the small networks in this crate are built from.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{Graph, Var};
pub use params::{Bound, Fnv1a, Param, ParamStore};
pub use rng::SplitMix64;
pub use tensor::Tensor;
