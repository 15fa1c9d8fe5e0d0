use crate::error::{ItsaError, Result};

/// Batch reduction of the per-sample feature distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// How the tensor-valued features are reduced to a scalar before taking
/// the input gradient that defines the perturbation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scalarization {
    /// Gradient of the sum of all feature activations (all-ones cotangent).
    #[default]
    Sum,
    /// Gradient of half the squared feature norm (cotangent = features).
    HalfSquaredNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScpConfig {
    /// Perturbation L2 norm per sample, in normalised input units.
    pub epsilon: f64,
    /// Input-gradient norms below this skip the perturbation for that sample.
    pub grad_norm_floor: f64,
    /// Weight of the feature-distance term.
    pub lambda: f64,
    pub reduction: Reduction,
    pub scalarization: Scalarization,
    /// Also evaluate the task loss on perturbed features (averaged with clean).
    pub perturbed_task: bool,
}

impl Default for ScpConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            grad_norm_floor: 1e-12,
            lambda: 0.1,
            reduction: Reduction::Mean,
            scalarization: Scalarization::Sum,
            perturbed_task: false,
        }
    }
}

impl ScpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(ItsaError::InvalidConfig(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ItsaError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.grad_norm_floor > 0.0) {
            return Err(ItsaError::InvalidConfig(format!(
                "grad_norm_floor must be > 0, got {}",
                self.grad_norm_floor
            )));
        }
        Ok(())
    }

    /// True when a training step needs perturbed inputs at all.
    pub fn needs_perturbation(&self) -> bool {
        self.lambda > 0.0 || self.perturbed_task
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ScpConfig::default();
        assert_eq!((c.epsilon, c.lambda), (0.5, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_negative_and_zero_floor() {
        for bad in [
            ScpConfig { epsilon: -0.1, ..Default::default() },
            ScpConfig { lambda: -1.0, ..Default::default() },
            ScpConfig { grad_norm_floor: 0.0, ..Default::default() },
            ScpConfig { epsilon: f64::NAN, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
