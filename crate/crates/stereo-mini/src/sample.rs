use diffnet::NdArray;

use crate::error::{Result, StereoError};

/// One rectified stereo pair with dense ground truth.
///
/// `left` and `right` are `[3, H, W]`, `disparity` and `valid` are `[H, W]`.
/// `valid` holds 1.0 where ground truth is defined, 0.0 elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub left: NdArray<f32>,
    pub right: NdArray<f32>,
    pub disparity: NdArray<f32>,
    pub valid: NdArray<f32>,
}

impl StereoSample {
    pub fn new(left: NdArray<f32>, right: NdArray<f32>, disparity: NdArray<f32>, valid: NdArray<f32>) -> Result<Self> {
        let bad = |detail: String| StereoError::Shape { op: "StereoSample", detail };
        if left.ndim() != 3 || left.shape()[0] != 3 {
            return Err(bad(format!("left view has shape {:?}, expected [3, H, W]", left.shape())));
        }
        if right.shape() != left.shape() {
            return Err(bad(format!("right view {:?} differs from left {:?}", right.shape(), left.shape())));
        }
        let hw = &left.shape()[1..];
        if disparity.shape() != hw || valid.shape() != hw {
            return Err(bad(format!(
                "disparity {:?} / mask {:?} do not match image size {:?}",
                disparity.shape(),
                valid.shape(),
                hw
            )));
        }
        Ok(Self { left, right, disparity, valid })
    }

    pub fn height(&self) -> usize {
        self.left.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.left.shape()[2]
    }
}

/// Stacks samples into batch arrays `(left, right, disparity, valid)`.
pub fn stack(samples: &[&StereoSample]) -> Result<(NdArray<f32>, NdArray<f32>, NdArray<f32>, NdArray<f32>)> {
    let first = samples
        .first()
        .ok_or_else(|| StereoError::InvalidConfig("cannot stack an empty batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut parts = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for s in samples {
        if (s.height(), s.width()) != (h, w) {
            return Err(StereoError::Shape {
                op: "stack",
                detail: format!("sample is {}x{}, batch is {h}x{w}", s.height(), s.width()),
            });
        }
        parts[0].extend_from_slice(s.left.data());
        parts[1].extend_from_slice(s.right.data());
        parts[2].extend_from_slice(s.disparity.data());
        parts[3].extend_from_slice(s.valid.data());
    }
    let n = samples.len();
    let [l, r, d, v] = parts;
    Ok((
        NdArray::new(vec![n, 3, h, w], l)?,
        NdArray::new(vec![n, 3, h, w], r)?,
        NdArray::new(vec![n, h, w], d)?,
        NdArray::new(vec![n, h, w], v)?,
    ))
}
