//! Fisher information of Gaussian encoders `z = mu(x) + sigma * eta`.
//!
//! Estimators of `E_z ||grad_x log p(z|x)||^2` (Monte Carlo, closed form for
//! linear means, Hutchinson probes), a numerical check of its first-order
//! relation to the total-variation distance between the latent densities at
//! `x` and a perturbed `x + eps * u`, and the KL term of the variational
//! information bottleneck.

mod encoder;
mod error;
mod fisher;
mod ib;
mod lemma;
pub mod quad;

pub use encoder::GaussianEncoder;
pub use error::{FisherError, Result};
pub use fisher::{fisher_info_linear_closed, fisher_info_mc, McEstimate, MAX_EXPLICIT_DIM};
pub use ib::{rib_penalty, vib_kl, IbConfig, KlOutput, RibPenalty};
pub use lemma::{lemma1_check, tv_distance_gauss1d, Lemma1Report, COS_PSI_FLOOR};
