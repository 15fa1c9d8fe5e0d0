//! Colour-background target domain: `out[c] = |patch[c] - digit|`.

use diffnet::NdArray;
use rand::Rng;

use crate::dataset::LabeledImageSet;
use crate::error::{DigitError, Result};

/// Smallest and largest control-grid size of the background noise.
const GRID_MIN: usize = 2;
const GRID_MAX: usize = 5;
/// Upper bound of background channel intensities.
pub const BACKGROUND_MAX: f32 = 0.6;

/// Derives an independent stream seed for item `index` (splitmix64 finaliser).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Low-frequency colour noise `[3, height, width]`: random colours on a coarse
/// grid, bilinearly interpolated.
pub fn texture_patch(seed: u64, index: u64, height: usize, width: usize) -> NdArray<f32> {
    let mut rng = diffnet::rng_from_seed(derive_seed(seed, index));
    let gy = rng.gen_range(GRID_MIN..=GRID_MAX);
    let gx = rng.gen_range(GRID_MIN..=GRID_MAX);
    let grid: Vec<f32> = (0..3 * gy * gx).map(|_| BACKGROUND_MAX * rng.gen::<f32>()).collect();
    let mut out = NdArray::zeros(&[3, height, width]);
    let d = out.data_mut();
    for y in 0..height {
        let fy = y as f32 * (gy - 1) as f32 / (height - 1).max(1) as f32;
        let y0 = (fy.floor() as usize).min(gy - 2);
        let ty = fy - y0 as f32;
        for x in 0..width {
            let fx = x as f32 * (gx - 1) as f32 / (width - 1).max(1) as f32;
            let x0 = (fx.floor() as usize).min(gx - 2);
            let tx = fx - x0 as f32;
            for c in 0..3 {
                let g = |yy: usize, xx: usize| grid[(c * gy + yy) * gx + xx];
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                let bot = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                d[(c * height + y) * width + x] = top * (1.0 - ty) + bot * ty;
            }
        }
    }
    out
}

/// Per-channel absolute difference between a colour patch and a broadcast
/// single-channel digit.
pub fn synth_mnistm(digit: &[f32], patch: &[f32]) -> Result<Vec<f32>> {
    if patch.len() != 3 * digit.len() {
        return Err(DigitError::DimensionMismatch(format!(
            "patch has {} values for a digit of {}",
            patch.len(),
            digit.len()
        )));
    }
    let plane = digit.len();
    Ok(patch.iter().enumerate().map(|(k, &p)| (p - digit[k % plane]).abs()).collect())
}

/// Target-domain copy of a single-channel set; image `i` uses patch `(seed, i)`.
pub fn synth_mnistm_set(set: &LabeledImageSet, seed: u64, split: &str) -> Result<LabeledImageSet> {
    if set.channels() != 1 {
        return Err(DigitError::DimensionMismatch(format!(
            "expected single-channel digits, got {} channels",
            set.channels()
        )));
    }
    let s = set.images.shape();
    let (n, h, w) = (s[0], s[2], s[3]);
    let mut data = Vec::with_capacity(n * 3 * h * w);
    for i in 0..n {
        let patch = texture_patch(seed, i as u64, h, w);
        data.extend(synth_mnistm(set.images.sample(i), patch.data())?);
    }
    LabeledImageSet::new(NdArray::new(vec![n, 3, h, w], data)?, set.labels.clone(), split)
}
