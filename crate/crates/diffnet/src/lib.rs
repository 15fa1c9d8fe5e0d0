//! Minimal deterministic differentiation core.
//!
//! Models are static compositions of a fixed set of primitive layers
//! ([`Layer`]). Every primitive knows its own forward pass and its
//! vector-Jacobian product with respect to both its parameters and its
//! input, so a [`Sequential`] model can return parameter gradients and
//! input gradients from one recorded forward [`Trace`].
//!
//! All models are generic over the scalar type: `f32` is used for
//! experiments, `f64` for finite-difference verification.

mod adam;
mod array;
mod error;
pub mod gradcheck;
mod jacobian;
mod layer;
pub mod loss;
mod model;
mod scalar;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use array::NdArray;
pub use error::{DiffError, Result};
pub use gradcheck::{grad_check, GradCheckReport};
pub use jacobian::jacobian;
pub use layer::Layer;
pub use model::{Backward, Chain, DiffModel, ParamsMut, Sequential, SequentialTrace, Want};
pub use scalar::{DType, Scalar};

/// Deterministic RNG used for parameter initialisation everywhere in the workspace.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the workspace RNG from a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
