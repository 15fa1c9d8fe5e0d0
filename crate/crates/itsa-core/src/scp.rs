use diffnet::{DiffModel, NdArray, Scalar};

use crate::config::{Scalarization, ScpConfig};
use crate::error::{ItsaError, Result};

/// Unit-norm perturbation directions, one per batch entry.
#[derive(Clone, Debug)]
pub struct ScpDirection<T> {
    pub u: NdArray<T>,
    /// L2 norm of the raw input gradient of each sample.
    pub grad_norms: Vec<f64>,
    /// Samples whose gradient norm fell below the floor; their `u` is zero.
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> ScpDirection<T> {
    pub fn num_degenerate(&self) -> usize {
        self.degenerate.iter().filter(|&&d| d).count()
    }
}

/// Input gradient of the scalarised features, normalised per sample.
///
/// The result carries no dependence on the extractor parameters: it is a
/// plain array and later steps treat it as a constant.
pub fn scp_direction<T: Scalar, M: DiffModel<T>>(
    extractor: &M,
    x: &NdArray<T>,
    cfg: &ScpConfig,
) -> Result<ScpDirection<T>> {
    cfg.validate()?;
    let (z, trace) = extractor.forward_trace(x)?;
    let cot = match cfg.scalarization {
        Scalarization::Sum => NdArray::ones(z.shape()),
        Scalarization::HalfSquaredNorm => z,
    };
    let mut g = extractor
        .backward(&trace, &cot, diffnet::Want::INPUT)?
        .input
        .expect("input gradient requested");
    let n = g.batch();
    let mut grad_norms = Vec::with_capacity(n);
    let mut degenerate = Vec::with_capacity(n);
    for i in 0..n {
        let s = g.sample_mut(i);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(ItsaError::NonFiniteGradient { sample: i });
        }
        let norm = s
            .iter()
            .map(|&v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum::<f64>()
            .sqrt();
        grad_norms.push(norm);
        if norm < cfg.grad_norm_floor {
            degenerate.push(true);
            s.iter_mut().for_each(|v| *v = T::zero());
        } else {
            degenerate.push(false);
            for v in s.iter_mut() {
                *v = T::from_f64_lossy(v.to_f64_lossy() / norm);
            }
        }
    }
    Ok(ScpDirection { u: g, grad_norms, degenerate })
}

/// `x + epsilon * u`
pub fn scp_perturb<T: Scalar>(x: &NdArray<T>, u: &NdArray<T>, epsilon: f64) -> Result<NdArray<T>> {
    let mut out = x.clone();
    out.axpy(T::from_f64_lossy(epsilon), u)?;
    Ok(out)
}

/// Clean and perturbed inputs with the corresponding features.
#[derive(Clone, Debug)]
pub struct PerturbedPair<T> {
    pub x: NdArray<T>,
    pub x_star: NdArray<T>,
    pub direction: ScpDirection<T>,
    pub z: NdArray<T>,
    pub z_star: NdArray<T>,
}

pub fn perturb<T: Scalar, M: DiffModel<T>>(
    extractor: &M,
    x: &NdArray<T>,
    cfg: &ScpConfig,
) -> Result<PerturbedPair<T>> {
    let direction = scp_direction(extractor, x, cfg)?;
    let x_star = scp_perturb(x, &direction.u, cfg.epsilon)?;
    let z = extractor.forward(x)?;
    let z_star = extractor.forward(&x_star)?;
    Ok(PerturbedPair { x: x.clone(), x_star, direction, z, z_star })
}
