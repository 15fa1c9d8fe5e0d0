use diffnet::{DiffModel, NdArray, Scalar};
use rand::Rng;

use crate::encoder::GaussianEncoder;
use crate::error::{FisherError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct IbConfig {
    /// Weight of the KL term of the variational bottleneck.
    pub beta: f64,
    /// Weight of the Fisher-information penalty.
    pub beta_fisher: f64,
    /// Hutchinson probes per step.
    pub n_probes: usize,
}

impl Default for IbConfig {
    fn default() -> Self {
        Self { beta: 1e-3, beta_fisher: 1e-3, n_probes: 1 }
    }
}

impl IbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.beta_fisher >= 0.0) || self.n_probes == 0 {
            return Err(FisherError::InvalidArgument(format!(
                "need beta >= 0, beta_fisher >= 0, n_probes >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct KlOutput {
    pub value: f64,
    pub grad_mu: NdArray<f64>,
    pub grad_sigma: NdArray<f64>,
}

/// `KL(N(mu, diag(sigma^2)) || N(0, I))` averaged over the batch, with gradients.
pub fn vib_kl(mu: &NdArray<f64>, sigma: &NdArray<f64>) -> Result<KlOutput> {
    mu.check_same_shape(sigma, "vib_kl")?;
    if let Some(s) = sigma.data().iter().find(|&&s| !(s > 0.0)) {
        return Err(FisherError::InvalidSigma(*s));
    }
    let inv_b = 1.0 / mu.batch().max(1) as f64;
    let value = mu
        .data()
        .iter()
        .zip(sigma.data())
        .map(|(&m, &s)| 0.5 * (s * s + m * m - 1.0 - 2.0 * s.ln()))
        .sum::<f64>()
        * inv_b;
    Ok(KlOutput {
        value,
        grad_mu: mu.scale(inv_b),
        grad_sigma: sigma.map(|s| (s - 1.0 / s) * inv_b),
    })
}

#[derive(Clone, Debug)]
pub struct RibPenalty<T> {
    pub value: f64,
    pub param_grads: Vec<NdArray<T>>,
}

/// Hutchinson estimate of `||J_mu||_F^2 / sigma^2` averaged over the batch,
/// with Rademacher probes and one input VJP per probe.
///
/// The parameter gradient of `||J^T v||^2` equals `2 d/dt grad_theta <v, mu(x + t w)>`
/// at `t = 0` with `w = J^T v` held fixed; the derivative in `t` is taken by
/// central differences with a step of `eps^(1/3) (1 + ||x||)` in input norm.
pub fn rib_penalty<T: Scalar, M: DiffModel<T>>(
    enc: &GaussianEncoder<M>,
    x: &NdArray<T>,
    n_probes: usize,
    seed: u64,
) -> Result<RibPenalty<T>> {
    if n_probes == 0 {
        return Err(FisherError::InvalidArgument("n_probes must be >= 1".into()));
    }
    let model = &enc.mu_model;
    let mut rng = diffnet::rng_from_seed(seed);
    let out_shape = {
        let mut s = vec![x.batch()];
        s.extend_from_slice(model.output_shape());
        s
    };
    let mut value = 0.0;
    // cube root of the unit roundoff balances truncation and rounding error
    let step = T::epsilon().to_f64_lossy().cbrt();
    let mut grads: Vec<NdArray<T>> = model.params().iter().map(|p| NdArray::zeros(p.shape())).collect();
    for _ in 0..n_probes {
        let v = NdArray::from_fn(&out_shape, |_| if rng.gen::<bool>() { T::one() } else { -T::one() });
        let w = model.input_vjp(x, &v)?;
        let w_norm = w.norm_l2();
        value += w_norm * w_norm;
        if w_norm == 0.0 {
            continue;
        }
        let t = step * (1.0 + x.norm_l2()) / w_norm;
        let mut xp = x.clone();
        xp.axpy(T::from_f64_lossy(t), &w)?;
        let mut xm = x.clone();
        xm.axpy(T::from_f64_lossy(-t), &w)?;
        let gp = model.param_grads(&xp, &v)?;
        let gm = model.param_grads(&xm, &v)?;
        let inv = T::from_f64_lossy(1.0 / t);
        for ((g, p), m) in grads.iter_mut().zip(&gp).zip(&gm) {
            g.axpy(inv, p)?;
            g.axpy(-inv, m)?;
        }
    }
    let scale = 1.0 / (x.batch().max(1) as f64 * n_probes as f64 * enc.sigma() * enc.sigma());
    for g in &mut grads {
        *g = g.scale(T::from_f64_lossy(scale));
    }
    Ok(RibPenalty { value: value * scale, param_grads: grads })
}
