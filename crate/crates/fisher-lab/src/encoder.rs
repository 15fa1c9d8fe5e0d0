use diffnet::{DiffModel, NdArray};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_sigma, Result};

/// Isotropic Gaussian encoder with a learned mean and fixed standard deviation.
#[derive(Clone, Debug)]
pub struct GaussianEncoder<M> {
    pub mu_model: M,
    sigma: f64,
}

impl<M> GaussianEncoder<M> {
    pub fn new(mu_model: M, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { mu_model, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl<M: DiffModel<f64>> GaussianEncoder<M> {
    pub fn mean(&self, x: &NdArray<f64>) -> Result<NdArray<f64>> {
        Ok(self.mu_model.forward(x)?)
    }

    /// One draw `mu(x) + sigma * eta` per batch entry.
    pub fn sample<R: Rng>(&self, x: &NdArray<f64>, rng: &mut R) -> Result<NdArray<f64>> {
        let mut z = self.mean(x)?;
        for v in z.data_mut() {
            *v += self.sigma * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(z)
    }
}
