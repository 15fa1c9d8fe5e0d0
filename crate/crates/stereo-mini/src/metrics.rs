use diffnet::NdArray;

use crate::error::{Result, StereoError};

/// Default bad-pixel threshold in pixels.
pub const D1_THRESHOLD: f64 = 3.0;

fn check(pred: &NdArray<f32>, gt: &NdArray<f32>, mask: &NdArray<f32>, op: &'static str) -> Result<()> {
    if pred.shape() != gt.shape() || pred.shape() != mask.shape() {
        return Err(StereoError::Shape {
            op,
            detail: format!("prediction {:?}, ground truth {:?}, mask {:?}", pred.shape(), gt.shape(), mask.shape()),
        });
    }
    Ok(())
}

fn masked_errors<'a>(pred: &'a NdArray<f32>, gt: &'a NdArray<f32>, mask: &'a NdArray<f32>) -> impl Iterator<Item = f64> + 'a {
    pred.data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .filter(|(_, &m)| m != 0.0)
        .map(|((&p, &g), _)| (p as f64 - g as f64).abs())
}

/// Mean absolute disparity error over masked pixels; 0 for an empty mask.
pub fn epe(pred: &NdArray<f32>, gt: &NdArray<f32>, mask: &NdArray<f32>) -> Result<f64> {
    check(pred, gt, mask, "epe")?;
    let (sum, n) = masked_errors(pred, gt, mask).fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Percentage of masked pixels whose error is strictly above `threshold`.
pub fn d1_rate(pred: &NdArray<f32>, gt: &NdArray<f32>, mask: &NdArray<f32>, threshold: f64) -> Result<f64> {
    check(pred, gt, mask, "d1_rate")?;
    if !(threshold > 0.0) {
        return Err(StereoError::InvalidConfig(format!("d1 threshold must be positive, got {threshold}")));
    }
    let (bad, n) = masked_errors(pred, gt, mask).fold((0usize, 0usize), |(b, n), e| (b + (e > threshold) as usize, n + 1));
    Ok(if n == 0 { 0.0 } else { 100.0 * bad as f64 / n as f64 })
}
