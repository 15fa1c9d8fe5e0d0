use diffnet::{NdArray, Scalar};

use crate::config::Reduction;
use crate::error::{ItsaError, Result};

/// Feature-distance loss with gradients for both feature arrays.
#[derive(Clone, Debug)]
pub struct FisherLoss<T> {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub grad_z: NdArray<T>,
    pub grad_z_star: NdArray<T>,
}

/// Reduced per-sample `||z - z_star||_2`.
pub fn fisher_loss<T: Scalar>(z: &NdArray<T>, z_star: &NdArray<T>, reduction: Reduction) -> Result<f64> {
    z.check_same_shape(z_star, "fisher_loss")?;
    let per_sample = distances(z, z_star);
    Ok(reduce(&per_sample, reduction))
}

/// As [`fisher_loss`], plus gradients. Samples with `z == z_star` get a zero
/// subgradient.
pub fn fisher_loss_with_grad<T: Scalar>(
    z: &NdArray<T>,
    z_star: &NdArray<T>,
    reduction: Reduction,
) -> Result<FisherLoss<T>> {
    z.check_same_shape(z_star, "fisher_loss")?;
    let per_sample = distances(z, z_star);
    let value = reduce(&per_sample, reduction);
    let scale = match reduction {
        Reduction::Mean => 1.0 / per_sample.len().max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad_z = NdArray::zeros(z.shape());
    for (i, &d) in per_sample.iter().enumerate() {
        if d > 0.0 {
            let k = scale / d;
            for ((g, &a), &b) in grad_z.sample_mut(i).iter_mut().zip(z.sample(i)).zip(z_star.sample(i)) {
                *g = T::from_f64_lossy(k * (a.to_f64_lossy() - b.to_f64_lossy()));
            }
        }
    }
    let grad_z_star = grad_z.map(|v| -v);
    Ok(FisherLoss { value, per_sample, grad_z, grad_z_star })
}

fn distances<T: Scalar>(z: &NdArray<T>, z_star: &NdArray<T>) -> Vec<f64> {
    (0..z.batch())
        .map(|i| {
            z.sample(i)
                .iter()
                .zip(z_star.sample(i))
                .map(|(&a, &b)| {
                    let d = a.to_f64_lossy() - b.to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

fn reduce(per_sample: &[f64], reduction: Reduction) -> f64 {
    let s: f64 = per_sample.iter().sum();
    match reduction {
        Reduction::Mean if !per_sample.is_empty() => s / per_sample.len() as f64,
        Reduction::Mean => 0.0,
        Reduction::Sum => s,
    }
}

/// p-Wasserstein distance between two point masses at `z` and `z_star`,
/// per sample. Equals the L2 distance for every `p >= 1`.
pub fn wasserstein_degenerate<T: Scalar>(z: &NdArray<T>, z_star: &NdArray<T>, p: f64) -> Result<Vec<f64>> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(ItsaError::InvalidConfig(format!("wasserstein order must be >= 1, got {p}")));
    }
    z.check_same_shape(z_star, "wasserstein_degenerate")?;
    Ok(distances(z, z_star).into_iter().map(|d| d.powf(p).powf(1.0 / p)).collect())
}

/// Task loss plus the weighted mean of the left and right feature-distance terms.
pub fn itsa_total_loss(task: f64, fi_left: f64, fi_right: f64, lambda: f64) -> f64 {
    task + 0.5 * lambda * (fi_left + fi_right)
}

pub fn itsa_total_loss_single(task: f64, fi: f64, lambda: f64) -> f64 {
    task + lambda * fi
}
