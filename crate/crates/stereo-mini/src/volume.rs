//! Concatenation cost volume, soft-argmin regression and disparity upsampling,
//! each with its vector-Jacobian product.

use diffnet::{NdArray, Scalar};

use crate::error::{Result, StereoError};

fn feature_dims<T: Scalar>(z: &NdArray<T>, op: &'static str) -> Result<[usize; 4]> {
    match *z.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        ref s => Err(StereoError::Shape { op, detail: format!("expected [batch, c, h, w] features, got {s:?}") }),
    }
}

/// `volume[b, :, d, y, x] = concat(z_l[b, :, y, x], z_r[b, :, y, x - d])`,
/// zero in the right half where `x < d`. Output shape `[B, 2c, levels, h, w]`.
pub fn build_cost_volume<T: Scalar>(z_l: &NdArray<T>, z_r: &NdArray<T>, levels: usize) -> Result<NdArray<T>> {
    let [b, c, h, w] = feature_dims(z_l, "build_cost_volume")?;
    z_l.check_same_shape(z_r, "build_cost_volume")?;
    if levels == 0 || levels > w {
        return Err(StereoError::InvalidConfig(format!("{levels} disparity levels for feature width {w}")));
    }
    let plane = h * w;
    let mut vol = NdArray::zeros(&[b, 2 * c, levels, h, w]);
    let out = vol.data_mut();
    for n in 0..b {
        for k in 0..c {
            let src_l = &z_l.data()[(n * c + k) * plane..][..plane];
            let src_r = &z_r.data()[(n * c + k) * plane..][..plane];
            for d in 0..levels {
                let dst_l = ((n * 2 * c + k) * levels + d) * plane;
                out[dst_l..dst_l + plane].copy_from_slice(src_l);
                let dst_r = ((n * 2 * c + c + k) * levels + d) * plane;
                for y in 0..h {
                    let row = dst_r + y * w;
                    out[row + d..row + w].copy_from_slice(&src_r[y * w..y * w + w - d]);
                }
            }
        }
    }
    Ok(vol)
}

/// Transpose of [`build_cost_volume`]: returns `(d z_l, d z_r)`.
pub fn cost_volume_backward<T: Scalar>(grad: &NdArray<T>, channels: usize, levels: usize) -> Result<(NdArray<T>, NdArray<T>)> {
    let (b, h, w) = match *grad.shape() {
        [b, c2, l, h, w] if c2 == 2 * channels && l == levels => (b, h, w),
        ref s => {
            return Err(StereoError::Shape {
                op: "cost_volume_backward",
                detail: format!("gradient {s:?} does not match {channels} channels and {levels} levels"),
            })
        }
    };
    let c = channels;
    let plane = h * w;
    let mut gl = NdArray::zeros(&[b, c, h, w]);
    let mut gr = NdArray::zeros(&[b, c, h, w]);
    let g = grad.data();
    for n in 0..b {
        for k in 0..c {
            let dl = &mut gl.data_mut()[(n * c + k) * plane..][..plane];
            for d in 0..levels {
                let src = &g[((n * 2 * c + k) * levels + d) * plane..][..plane];
                for (a, &v) in dl.iter_mut().zip(src) {
                    *a = *a + v;
                }
            }
            let dr = &mut gr.data_mut()[(n * c + k) * plane..][..plane];
            for d in 0..levels {
                let src = &g[((n * 2 * c + c + k) * levels + d) * plane..][..plane];
                for y in 0..h {
                    for x in d..w {
                        dr[y * w + x - d] = dr[y * w + x - d] + src[y * w + x];
                    }
                }
            }
        }
    }
    Ok((gl, gr))
}

fn cost_dims<T: Scalar>(cost: &NdArray<T>) -> Result<[usize; 4]> {
    match *cost.shape() {
        [b, l, h, w] => Ok([b, l, h, w]),
        [b, 1, l, h, w] => Ok([b, l, h, w]),
        ref s => Err(StereoError::Shape { op: "soft_argmin", detail: format!("expected [batch, levels, h, w] costs, got {s:?}") }),
    }
}

/// Per pixel `sum_d d * softmax_d(-cost)`. Accepts `[B, D, h, w]` or
/// `[B, 1, D, h, w]` and returns `[B, h, w]` in level units.
pub fn soft_argmin<T: Scalar>(cost: &NdArray<T>) -> Result<NdArray<T>> {
    let [b, levels, h, w] = cost_dims(cost)?;
    let plane = h * w;
    let mut out = NdArray::zeros(&[b, h, w]);
    let mut p = vec![T::zero(); levels];
    for n in 0..b {
        let c = &cost.data()[n * levels * plane..][..levels * plane];
        for i in 0..plane {
            softmax_neg(c, i, plane, &mut p);
            out.data_mut()[n * plane + i] = p.iter().enumerate().map(|(d, &pd)| T::from_usize(d).unwrap() * pd).sum();
        }
    }
    Ok(out)
}

/// Gradient of [`soft_argmin`] with respect to the costs, same shape as `cost`.
/// `d yhat / d cost_d = -p_d (d - yhat)`.
pub fn soft_argmin_backward<T: Scalar>(cost: &NdArray<T>, grad: &NdArray<T>) -> Result<NdArray<T>> {
    let [b, levels, h, w] = cost_dims(cost)?;
    if grad.shape() != [b, h, w] {
        return Err(StereoError::Shape { op: "soft_argmin_backward", detail: format!("gradient {:?} for {b}x{h}x{w} output", grad.shape()) });
    }
    let plane = h * w;
    let mut out = NdArray::zeros(cost.shape());
    let mut p = vec![T::zero(); levels];
    for n in 0..b {
        let c = &cost.data()[n * levels * plane..][..levels * plane];
        let o = &mut out.data_mut()[n * levels * plane..][..levels * plane];
        for i in 0..plane {
            softmax_neg(c, i, plane, &mut p);
            let mean: T = p.iter().enumerate().map(|(d, &pd)| T::from_usize(d).unwrap() * pd).sum();
            let g = grad.data()[n * plane + i];
            for (d, &pd) in p.iter().enumerate() {
                o[d * plane + i] = -g * pd * (T::from_usize(d).unwrap() - mean);
            }
        }
    }
    Ok(out)
}

fn softmax_neg<T: Scalar>(c: &[T], i: usize, plane: usize, p: &mut [T]) {
    let levels = p.len();
    let mut lo = c[i];
    for d in 1..levels {
        lo = lo.min(c[d * plane + i]);
    }
    let mut total = T::zero();
    for (d, pd) in p.iter_mut().enumerate() {
        *pd = (lo - c[d * plane + i]).exp();
        total = total + *pd;
    }
    for pd in p.iter_mut() {
        *pd = *pd / total;
    }
}

/// Source rows for half-pixel-centred bilinear upsampling by `factor`:
/// `(i0, i1, weight of i1)` per output index.
fn taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of `[B, h, w]` maps by `factor`, multiplied by `scale`.
pub fn upsample<T: Scalar>(x: &NdArray<T>, factor: usize, scale: T) -> Result<NdArray<T>> {
    let (b, h, w) = map_dims(x, "upsample")?;
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let (oh, ow) = (h * factor, w * factor);
    let mut out = NdArray::zeros(&[b, oh, ow]);
    for n in 0..b {
        let src = x.sample(n);
        let dst = out.sample_mut(n);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = scale * (top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Ok(out)
}

/// Transpose of [`upsample`] for the input shape `[B, h, w]`.
pub fn upsample_backward<T: Scalar>(grad: &NdArray<T>, h: usize, w: usize, factor: usize, scale: T) -> Result<NdArray<T>> {
    let (b, oh, ow) = map_dims(grad, "upsample_backward")?;
    if (oh, ow) != (h * factor, w * factor) {
        return Err(StereoError::Shape {
            op: "upsample_backward",
            detail: format!("gradient is {oh}x{ow}, expected {}x{}", h * factor, w * factor),
        });
    }
    let (ty, tx) = (taps(h, factor), taps(w, factor));
    let mut out = NdArray::zeros(&[b, h, w]);
    for n in 0..b {
        let g = grad.sample(n);
        let dst = out.sample_mut(n);
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let v = scale * g[oy * ow + ox];
                let (top, bot) = (v * (T::one() - fy), v * fy);
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    Ok(out)
}

fn map_dims<T: Scalar>(x: &NdArray<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, h, w] if h > 0 && w > 0 => Ok((b, h, w)),
        ref s => Err(StereoError::Shape { op, detail: format!("expected non-empty [batch, h, w] maps, got {s:?}") }),
    }
}
