use diffnet::{DiffModel, NdArray};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::GaussianEncoder;
use crate::error::{check_sigma, FisherError, Result};
use crate::quad::{integrate_piecewise, normal_pdf};

/// Below this `|cos psi|` the angle is reported as ill-conditioned.
pub const COS_PSI_FLOOR: f64 = 1e-6;

const QUAD_TOL: f64 = 1e-14;
const TAIL_SIGMAS: f64 = 14.0;

/// `int |N(mu1, sigma^2) - N(mu2, sigma^2)| dz` by adaptive quadrature.
pub fn tv_distance_gauss1d(mu1: f64, mu2: f64, sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if mu1 == mu2 {
        return Ok(0.0);
    }
    let (lo, hi) = if mu1 < mu2 { (mu1, mu2) } else { (mu2, mu1) };
    // the densities cross at the midpoint
    let points = [lo - TAIL_SIGMAS * sigma, lo, 0.5 * (lo + hi), hi, hi + TAIL_SIGMAS * sigma];
    Ok(integrate_piecewise(
        &|z| (normal_pdf(z, lo, sigma) - normal_pdf(z, hi, sigma)).abs(),
        &points,
        QUAD_TOL,
    ))
}

/// First-order relation between Fisher information and the total-variation
/// distance of latent densities, evaluated for a 1-D latent.
#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub epsilon: f64,
    /// Angle between `u` and the score direction, in radians.
    pub psi: f64,
    pub cos_psi: f64,
    /// Fisher information at `x` by quadrature.
    pub lhs: f64,
    pub lhs_mc: f64,
    /// `tv^2 / (eps^2 cos^2 psi) + variance_term`; `None` when ill-conditioned.
    pub rhs: Option<f64>,
    pub tv: f64,
    /// Variance of `||grad_x log p||` by quadrature.
    pub variance_term: f64,
    pub variance_term_mc: f64,
    /// `|lhs - rhs| / lhs`; `None` when ill-conditioned.
    pub relative_residual: Option<f64>,
    pub ill_conditioned: bool,
}

/// Compares the Fisher information at `x` with its approximation through the
/// total-variation distance to the latent density at `x + epsilon * u`.
pub fn lemma1_check<M: DiffModel<f64>>(
    enc: &GaussianEncoder<M>,
    x: &NdArray<f64>,
    u: &NdArray<f64>,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Lemma1Report> {
    let latent: usize = enc.mu_model.output_shape().iter().product();
    if latent != 1 {
        return Err(FisherError::InvalidArgument(format!("latent must be 1-D, got {latent}")));
    }
    if x.batch() != 1 {
        return Err(FisherError::InvalidArgument("x must hold a single sample".into()));
    }
    x.check_same_shape(u, "lemma1_check")?;
    if !(epsilon > 0.0) || n_samples < 2 {
        return Err(FisherError::InvalidArgument(format!(
            "need epsilon > 0 and n_samples >= 2, got {epsilon} and {n_samples}"
        )));
    }
    let sigma = enc.sigma();
    let (mu, trace) = enc.mu_model.forward_trace(x)?;
    let mu = mu.data()[0];
    let grad_mu = enc
        .mu_model
        .backward(&trace, &NdArray::ones(&[1, 1]), diffnet::Want::INPUT)?
        .input
        .expect("input gradient requested");
    let gnorm = grad_mu.norm_l2();
    let x_star = {
        let mut xs = x.clone();
        xs.axpy(epsilon, u)?;
        xs
    };
    let mu_star = enc.mean(&x_star)?.data()[0];

    // score norm ||grad_x log p(z|x)|| = ||grad mu|| |z - mu| / sigma^2
    let score = |z: f64| gnorm * (z - mu).abs() / (sigma * sigma);
    let points = [mu - TAIL_SIGMAS * sigma, mu, mu + TAIL_SIGMAS * sigma];
    let m1 = integrate_piecewise(&|z| score(z) * normal_pdf(z, mu, sigma), &points, QUAD_TOL);
    let m2 = integrate_piecewise(&|z| score(z).powi(2) * normal_pdf(z, mu, sigma), &points, QUAD_TOL);
    let variance_term = (m2 - m1 * m1).max(0.0);
    let lhs = m2;

    // direction of int sign(z - mu) grad_x p(z|x) dz, which is grad mu scaled by
    // int |z - mu| p / sigma^2 dz > 0
    let abs_moment = integrate_piecewise(
        &|z| (z - mu).abs() / (sigma * sigma) * normal_pdf(z, mu, sigma),
        &points,
        QUAD_TOL,
    );
    let grad_p = grad_mu.scale(abs_moment);
    let gp_norm = grad_p.norm_l2();
    let cos_psi = if gp_norm > 0.0 {
        grad_p.dot(u)? / (gp_norm * u.norm_l2())
    } else {
        0.0
    };
    let psi = cos_psi.clamp(-1.0, 1.0).acos();
    let tv = tv_distance_gauss1d(mu, mu_star, sigma)?;
    let ill_conditioned = cos_psi.abs() < COS_PSI_FLOOR;
    let rhs = (!ill_conditioned).then(|| tv * tv / (epsilon * epsilon * cos_psi * cos_psi) + variance_term);
    let relative_residual = rhs.map(|r| if lhs > 0.0 { (lhs - r).abs() / lhs } else { (lhs - r).abs() });

    let mut rng = diffnet::rng_from_seed(seed);
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for _ in 0..n_samples {
        let eta: f64 = rng.sample(StandardNormal);
        let s = score(mu + sigma * eta);
        s1 += s;
        s2 += s * s;
    }
    let n = n_samples as f64;
    let lhs_mc = s2 / n;
    let variance_term_mc = ((s2 - s1 * s1 / n) / (n - 1.0)).max(0.0);

    Ok(Lemma1Report {
        epsilon,
        psi,
        cos_psi,
        lhs,
        lhs_mc,
        rhs,
        tv,
        variance_term,
        variance_term_mc,
        relative_residual,
        ill_conditioned,
    })
}
