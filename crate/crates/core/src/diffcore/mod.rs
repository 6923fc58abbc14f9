//! Reverse-mode differentiation over dense `f64` tensors, with the
//! parameter store, AdamW and checkpointing the prior trains with.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod graph;
mod kernels;
pub mod nn;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use graph::{Gradients, Graph, Var};
pub use params::ParamStore;
pub use tensor::Tensor;
