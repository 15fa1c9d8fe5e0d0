//! Evaluation-time domain shifts that break colour consistency between views
//! or follow the model's own input gradient.

use std::fmt;
use std::str::FromStr;

use diffnet::NdArray;
use itsa_core::{scp_direction, scp_perturb, ScpConfig};
use rand::Rng;

use crate::error::{Result, StereoError};
use crate::net::StereoNet;
use crate::sample::StereoSample;
use crate::scene::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShiftKind {
    Acj,
    GrayLeft,
    GrayRight,
    Scp,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 4] = [ShiftKind::Acj, ShiftKind::GrayLeft, ShiftKind::GrayRight, ShiftKind::Scp];

    pub fn as_str(self) -> &'static str {
        match self {
            ShiftKind::Acj => "acj",
            ShiftKind::GrayLeft => "gray_left",
            ShiftKind::GrayRight => "gray_right",
            ShiftKind::Scp => "scp",
        }
    }
}

impl fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShiftKind {
    type Err = StereoError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| StereoError::InvalidConfig(format!("unknown shift kind {s:?}")))
    }
}

/// Asymmetric colour jitter for one view:
/// `r = v + remix * v`, then `out = r + (contrast - 1)(r - mean(r)) + brightness`,
/// clamped to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AcjParams {
    pub brightness: f32,
    pub contrast: f32,
    /// Added to the identity colour matrix.
    pub remix: [[f32; 3]; 3],
}

impl AcjParams {
    pub fn identity() -> Self {
        Self { brightness: 0.0, contrast: 1.0, remix: [[0.0; 3]; 3] }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            brightness: rng.gen_range(-0.2..0.2),
            contrast: rng.gen_range(0.7..1.3),
            remix: std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-0.25..0.25))),
        }
    }

    pub fn apply(&self, img: &NdArray<f32>) -> NdArray<f32> {
        let plane = img.len() / 3;
        let src = img.data();
        let mut mixed = img.clone();
        for c in 0..3 {
            for i in 0..plane {
                let mut extra = 0.0;
                for j in 0..3 {
                    extra += self.remix[c][j] * src[j * plane + i];
                }
                mixed.data_mut()[c * plane + i] = src[c * plane + i] + extra;
            }
        }
        let mut out = mixed.clone();
        for c in 0..3 {
            let ch = &mut out.data_mut()[c * plane..(c + 1) * plane];
            let mean = ch.iter().map(|&v| v as f64).sum::<f64>() as f32 / plane as f32;
            for v in ch.iter_mut() {
                *v = (*v + (self.contrast - 1.0) * (*v - mean) + self.brightness).clamp(0.0, 1.0);
            }
        }
        out
    }
}

/// Luminance replicated over the three channels.
pub fn grayscale(img: &NdArray<f32>) -> NdArray<f32> {
    let plane = img.len() / 3;
    let d = img.data();
    let mut out = img.clone();
    for i in 0..plane {
        let y = 0.299 * d[i] + 0.587 * d[plane + i] + 0.114 * d[2 * plane + i];
        for c in 0..3 {
            out.data_mut()[c * plane + i] = y;
        }
    }
    out
}

/// Applies a shift to both views; ground truth is untouched. `scp` perturbs
/// each view along its own extractor-gradient direction with step `epsilon`
/// and needs `model`.
pub fn shift_domain(
    sample: &StereoSample,
    kind: ShiftKind,
    seed: u64,
    model: Option<&StereoNet<f32>>,
    epsilon: f64,
) -> Result<StereoSample> {
    let mut out = sample.clone();
    match kind {
        ShiftKind::Acj => {
            let mut rng = diffnet::rng_from_seed(derive_seed(seed, 0xac1));
            let pl = AcjParams::random(&mut rng);
            let pr = AcjParams::random(&mut rng);
            out.left = pl.apply(&sample.left);
            out.right = pr.apply(&sample.right);
        }
        ShiftKind::GrayLeft => out.left = grayscale(&sample.left),
        ShiftKind::GrayRight => out.right = grayscale(&sample.right),
        ShiftKind::Scp => {
            let net = model.ok_or(StereoError::MissingModel)?;
            if epsilon == 0.0 {
                return Ok(out);
            }
            let cfg = ScpConfig { epsilon, ..Default::default() };
            for view in [&mut out.left, &mut out.right] {
                let x = batch_of_one(view)?;
                let dir = scp_direction(&net.extractor, &x, &cfg)?;
                let xs = scp_perturb(&x, &dir.u, epsilon)?;
                *view = xs.reshape(view.shape())?;
            }
        }
    }
    Ok(out)
}

fn batch_of_one(img: &NdArray<f32>) -> Result<NdArray<f32>> {
    let mut shape = vec![1];
    shape.extend_from_slice(img.shape());
    Ok(img.clone().reshape(&shape)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in ShiftKind::ALL {
            assert_eq!(k.as_str().parse::<ShiftKind>().unwrap(), k);
        }
        assert!("gray".parse::<ShiftKind>().is_err());
    }

    #[test]
    fn grayscale_of_gray_is_unchanged() {
        let img = NdArray::full(&[3, 2, 2], 0.25f32);
        let g = grayscale(&img);
        assert!(g.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }
}
