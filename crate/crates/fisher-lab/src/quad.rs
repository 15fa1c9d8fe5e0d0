//! Adaptive Simpson quadrature.

const MAX_DEPTH: u32 = 48;

/// Integral of `f` over `[a, b]` to roughly absolute tolerance `tol`.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral over `[a, b]` split at the given interior breakpoints.
pub fn integrate_piecewise(f: &impl Fn(f64) -> f64, points: &[f64], tol: f64) -> f64 {
    let pieces = (points.len() - 1).max(1) as f64;
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| adaptive_simpson(f, w[0], w[1], tol / pieces))
        .sum()
}

/// Standard normal density.
pub fn normal_pdf(z: f64, mean: f64, sigma: f64) -> f64 {
    let t = (z - mean) / sigma;
    (-0.5 * t * t).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
}
