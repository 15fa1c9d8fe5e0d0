use diffnet::{jacobian, DiffModel, NdArray};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::GaussianEncoder;
use crate::error::{check_sigma, FisherError, Result};

/// Largest latent or input dimension for which explicit Jacobians are built.
pub const MAX_EXPLICIT_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

/// Monte-Carlo estimate of `E_z ||grad_x log p(z|x)||^2`, averaged over the batch.
///
/// With `z - mu = sigma * eta`, the score is `J^T eta / sigma` where `J` is the
/// Jacobian of the mean at `x`.
pub fn fisher_info_mc<M: DiffModel<f64>>(
    enc: &GaussianEncoder<M>,
    x: &NdArray<f64>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(FisherError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let inputs = x.sample_len();
    if inputs > MAX_EXPLICIT_DIM {
        return Err(FisherError::TooLarge { what: "input", got: inputs, max: MAX_EXPLICIT_DIM });
    }
    let latent: usize = enc.mu_model.output_shape().iter().product();
    if latent > MAX_EXPLICIT_DIM {
        return Err(FisherError::TooLarge { what: "latent", got: latent, max: MAX_EXPLICIT_DIM });
    }
    let mut rng = diffnet::rng_from_seed(seed);
    let sigma = enc.sigma();
    let batch = x.batch();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut eta = vec![0.0; latent];
    for b in 0..batch {
        let j = jacobian(&enc.mu_model, &x.select(&[b]))?;
        let jd = j.data();
        for _ in 0..n_samples {
            eta.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            let mut sq = 0.0;
            for k in 0..inputs {
                let s: f64 = (0..latent).map(|r| jd[r * inputs + k] * eta[r]).sum::<f64>() / sigma;
                sq += s * s;
            }
            sum += sq;
            sum_sq += sq * sq;
        }
    }
    let n = (batch * n_samples) as f64;
    let mean = sum / n;
    let var = if n > 1.0 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(McEstimate { mean, std_err: (var / n).sqrt(), n_samples })
}

/// `||A||_F^2 / sigma^2`, the Fisher information of `z ~ N(A x, sigma^2 I)`.
pub fn fisher_info_linear_closed(a: &NdArray<f64>, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    Ok(a.data().iter().map(|v| v * v).sum::<f64>() / (sigma * sigma))
}
