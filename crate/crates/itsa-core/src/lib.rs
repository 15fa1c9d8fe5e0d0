//! Shortcut-avoidance objective.
//!
//! * [`scp_direction`] / [`scp_perturb`]: perturb each input sample by `epsilon`
//!   along the normalised input gradient of the extractor's summed features.
//! * [`fisher_loss`]: per-sample L2 distance between clean and perturbed
//!   features, the first-order surrogate of the Fisher information of the
//!   latent with respect to the input.
//! * [`itsa_step`]: task loss plus the weighted feature-distance term for one
//!   or more views sharing one extractor, with parameter gradients.

mod config;
mod error;
mod fisher;
mod metrics;
mod scp;
mod step;

pub use config::{Reduction, Scalarization, ScpConfig};
pub use error::{ItsaError, Result};
pub use fisher::{
    fisher_loss, fisher_loss_with_grad, itsa_total_loss, itsa_total_loss_single,
    wasserstein_degenerate, FisherLoss,
};
pub use metrics::Metric;
pub use scp::{perturb, scp_direction, scp_perturb, PerturbedPair, ScpDirection};
pub use step::{itsa_step, ItsaStep, TaskEval};
