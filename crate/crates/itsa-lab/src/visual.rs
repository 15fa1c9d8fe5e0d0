use std::path::Path;

use diffnet::NdArray;

use crate::error::{HarnessError, Result};

/// Writes an `[H, W]` disparity map as an 8-bit grayscale PNG, mapping
/// `0..=max_disparity` to black..white.
pub fn save_disparity_png(path: &Path, map: &NdArray<f32>, max_disparity: f32) -> Result<()> {
    let (h, w) = match *map.shape() {
        [h, w] => (h, w),
        ref s => return Err(HarnessError::Image(format!("expected [H, W] map, got {s:?}"))),
    };
    let pixels: Vec<u8> = map
        .data()
        .iter()
        .map(|&d| {
            let v = if d.is_finite() { (d / max_disparity).clamp(0.0, 1.0) } else { 0.0 };
            (v * 255.0).round() as u8
        })
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| HarnessError::Image("buffer size mismatch".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| HarnessError::Image(format!("{}: {e}", path.display())))
}

/// Writes a `[3, H, W]` image in `[0, 1]` as an RGB PNG.
pub fn save_rgb_png(path: &Path, img: &NdArray<f32>) -> Result<()> {
    let (h, w) = match *img.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(HarnessError::Image(format!("expected [3, H, W] image, got {s:?}"))),
    };
    let plane = h * w;
    let mut pixels = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            pixels.push((img.data()[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let out = image::RgbImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| HarnessError::Image("buffer size mismatch".into()))?;
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| HarnessError::Image(format!("{}: {e}", path.display())))
}
