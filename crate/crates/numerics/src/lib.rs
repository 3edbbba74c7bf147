//! Minimal dense-tensor engine: `f64` tensors, a recording tape with
//! reverse-mode differentiation, the layer set used by the recogniser,
//! Adam, and a binary checkpoint format.

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
mod tensor;

pub use error::{NumericsError, Result};
pub use graph::{Graph, NodeId};
pub use optim::Adam;
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tensor::{argmax, Tensor};

/// Seeded generator used for every random draw in the workspace.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
