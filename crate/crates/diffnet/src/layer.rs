use rand::Rng as _;

use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::Rng;

/// Primitive differentiable operation.
///
/// Every variant consumes and produces batch-first arrays. Convolutions use
/// explicit zero padding and stride and no dilation; `Softmax` normalises
/// over axis 1 of its input.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Linear {
        weight: NdArray<T>,
        bias: NdArray<T>,
    },
    Conv2d {
        weight: NdArray<T>,
        bias: NdArray<T>,
        stride: usize,
        padding: usize,
    },
    Conv3d {
        weight: NdArray<T>,
        bias: NdArray<T>,
        stride: usize,
        padding: usize,
    },
    LeakyRelu {
        slope: T,
    },
    Tanh,
    AvgPool2d {
        size: usize,
    },
    Softmax,
    Flatten,
}

/// Default negative slope for the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.01;

fn uniform<T: Scalar>(shape: &[usize], bound: f64, rng: &mut Rng) -> NdArray<T> {
    NdArray::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
}

fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl<T: Scalar> Layer<T> {
    pub fn linear(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Layer::Linear {
            weight: uniform(&[outputs, inputs], he_bound(inputs), rng),
            bias: NdArray::zeros(&[outputs]),
        }
    }

    pub fn conv2d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Layer::Conv2d {
            weight: uniform(
                &[out_channels, in_channels, kernel, kernel],
                he_bound(fan_in),
                rng,
            ),
            bias: NdArray::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn conv3d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel * kernel;
        Layer::Conv3d {
            weight: uniform(
                &[out_channels, in_channels, kernel, kernel, kernel],
                he_bound(fan_in),
                rng,
            ),
            bias: NdArray::zeros(&[out_channels]),
            stride,
            padding,
        }
    }

    pub fn leaky_relu() -> Self {
        Layer::LeakyRelu {
            slope: T::from_f64_lossy(LEAKY_SLOPE),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Conv3d { .. } => "conv3d",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Tanh => "tanh",
            Layer::AvgPool2d { .. } => "avg_pool2d",
            Layer::Softmax => "softmax",
            Layer::Flatten => "flatten",
        }
    }

    pub fn params(&self) -> Vec<&NdArray<T>> {
        match self {
            Layer::Linear { weight, bias }
            | Layer::Conv2d { weight, bias, .. }
            | Layer::Conv3d { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut NdArray<T>> {
        match self {
            Layer::Linear { weight, bias }
            | Layer::Conv2d { weight, bias, .. }
            | Layer::Conv3d { weight, bias, .. } => vec![weight, bias],
            _ => Vec::new(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let op = self.name();
        match self {
            Layer::Linear { weight, .. } => {
                expect_rank(op, input, 1)?;
                expect_dim(op, 1, weight.shape()[1], input[0])?;
                Ok(vec![weight.shape()[0]])
            }
            Layer::Conv2d { .. } | Layer::Conv3d { .. } => {
                Ok(self.conv_geometry(input)?.output_shape())
            }
            Layer::AvgPool2d { size } => {
                expect_rank(op, input, 3)?;
                if *size == 0 {
                    return Err(DiffError::InvalidConfig("pool size 0".into()));
                }
                for d in 1..3 {
                    if input[d] % size != 0 {
                        return Err(DiffError::ShapeMismatch {
                            op,
                            dim: d + 1,
                            expected: (input[d] / size) * size,
                            got: input[d],
                        });
                    }
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            Layer::Softmax => {
                if input.is_empty() {
                    return Err(DiffError::RankMismatch {
                        op,
                        expected: 1,
                        got: 0,
                    });
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::LeakyRelu { .. } | Layer::Tanh => Ok(input.to_vec()),
        }
    }

    fn conv_geometry(&self, input: &[usize]) -> Result<ConvGeometry> {
        let op = self.name();
        let (weight, stride, padding, spatial) = match self {
            Layer::Conv2d {
                weight,
                stride,
                padding,
                ..
            } => (weight, *stride, *padding, 2),
            Layer::Conv3d {
                weight,
                stride,
                padding,
                ..
            } => (weight, *stride, *padding, 3),
            _ => unreachable!("conv_geometry on non-conv layer"),
        };
        if stride == 0 {
            return Err(DiffError::InvalidConfig(format!("{op}: stride 0")));
        }
        expect_rank(op, input, spatial + 1)?;
        let ws = weight.shape();
        expect_dim(op, 1, ws[1], input[0])?;
        let mut geo = ConvGeometry {
            c_in: ws[1],
            c_out: ws[0],
            input: [1; 3],
            kernel: [1; 3],
            stride: [1; 3],
            pad: [0; 3],
            out: [1; 3],
            spatial,
        };
        let offset = 3 - spatial;
        for d in 0..spatial {
            let size = input[1 + d];
            let k = ws[2 + d];
            geo.input[offset + d] = size;
            geo.kernel[offset + d] = k;
            geo.stride[offset + d] = stride;
            geo.pad[offset + d] = padding;
            if size + 2 * padding < k {
                return Err(DiffError::ShapeMismatch {
                    op,
                    dim: d + 2,
                    expected: k,
                    got: size + 2 * padding,
                });
            }
            geo.out[offset + d] = (size + 2 * padding - k) / stride + 1;
        }
        Ok(geo)
    }

    /// Forward pass on a batch. Shapes are assumed to be validated.
    pub fn forward(&self, x: &NdArray<T>) -> Result<NdArray<T>> {
        let n = x.batch();
        let out_sample = self.output_shape(x.sample_shape())?;
        let mut out_shape = vec![n];
        out_shape.extend_from_slice(&out_sample);
        match self {
            Layer::Linear { weight, bias } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                let mut y = vec![T::zero(); n * o];
                for row in y.chunks_mut(o) {
                    row.copy_from_slice(bias.data());
                }
                T::gemm(false, true, n, o, i, T::one(), x.data(), weight.data(), T::one(), &mut y);
                NdArray::new(out_shape, y)
            }
            Layer::Conv2d { weight, bias, .. } | Layer::Conv3d { weight, bias, .. } => {
                let geo = self.conv_geometry(x.sample_shape())?;
                let (k, p) = (geo.col_rows(), geo.positions());
                let direct = geo.c_out <= DIRECT_MAX_OUT;
                let mut cols = vec![T::zero(); if direct { 0 } else { k * p }];
                let mut y = vec![T::zero(); n * geo.c_out * p];
                for (b, yb) in y.chunks_mut(geo.c_out * p).enumerate() {
                    for (c, row) in yb.chunks_mut(p).enumerate() {
                        row.fill(bias.data()[c]);
                    }
                    if direct {
                        geo.direct_forward(x.sample(b), weight.data(), yb);
                    } else {
                        geo.im2col(x.sample(b), &mut cols);
                        T::gemm(false, false, geo.c_out, p, k, T::one(), weight.data(), &cols, T::one(), yb);
                    }
                }
                NdArray::new(out_shape, y)
            }
            Layer::LeakyRelu { slope } => Ok(x.map(|v| if v > T::zero() { v } else { v * *slope })),
            Layer::Tanh => Ok(x.map(|v| v.tanh())),
            Layer::AvgPool2d { size } => {
                let s = x.sample_shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / size, w / size);
                let inv = T::one() / T::from_usize(size * size).unwrap();
                let mut y = vec![T::zero(); n * c * oh * ow];
                for b in 0..n {
                    let xs = x.sample(b);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = T::zero();
                                for i in 0..*size {
                                    for j in 0..*size {
                                        acc = acc + xs[(ch * h + oy * size + i) * w + ox * size + j];
                                    }
                                }
                                y[((b * c + ch) * oh + oy) * ow + ox] = acc * inv;
                            }
                        }
                    }
                }
                NdArray::new(out_shape, y)
            }
            Layer::Softmax => {
                let s = x.sample_shape();
                let (c, inner) = (s[0], s[1..].iter().product::<usize>());
                let mut y = x.data().to_vec();
                for b in 0..n {
                    for r in 0..inner {
                        softmax_strided(&mut y[b * c * inner + r..], c, inner);
                    }
                }
                NdArray::new(out_shape, y)
            }
            Layer::Flatten => x.clone().reshape(&out_shape),
        }
    }

    /// Vector-Jacobian product. `x` and `y` are this layer's recorded input
    /// and output; returns parameter gradients (empty unless requested) and
    /// the input gradient (when requested).
    pub fn backward(
        &self,
        x: &NdArray<T>,
        y: &NdArray<T>,
        dy: &NdArray<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Vec<NdArray<T>>, Option<NdArray<T>>)> {
        let n = x.batch();
        match self {
            Layer::Linear { weight, .. } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                let mut grads = Vec::new();
                if want_params {
                    let mut dw = vec![T::zero(); o * i];
                    T::gemm(true, false, o, i, n, T::one(), dy.data(), x.data(), T::zero(), &mut dw);
                    let mut db = vec![T::zero(); o];
                    for row in dy.data().chunks(o) {
                        for (acc, &g) in db.iter_mut().zip(row) {
                            *acc = *acc + g;
                        }
                    }
                    grads.push(NdArray::new(vec![o, i], dw)?);
                    grads.push(NdArray::new(vec![o], db)?);
                }
                let dx = if want_input {
                    let mut dx = vec![T::zero(); n * i];
                    T::gemm(false, false, n, i, o, T::one(), dy.data(), weight.data(), T::zero(), &mut dx);
                    Some(NdArray::new(x.shape().to_vec(), dx)?)
                } else {
                    None
                };
                Ok((grads, dx))
            }
            Layer::Conv2d { weight, .. } | Layer::Conv3d { weight, .. } => {
                let geo = self.conv_geometry(x.sample_shape())?;
                let (k, p, co) = (geo.col_rows(), geo.positions(), geo.c_out);
                if co <= DIRECT_MAX_OUT {
                    return self.direct_backward(&geo, x, weight, dy, want_params, want_input);
                }
                let mut cols = vec![T::zero(); k * p];
                let mut dw = vec![T::zero(); if want_params { co * k } else { 0 }];
                let mut db = vec![T::zero(); if want_params { co } else { 0 }];
                let mut dx = if want_input {
                    Some(NdArray::zeros(x.shape()))
                } else {
                    None
                };
                for b in 0..n {
                    let dyb = dy.sample(b);
                    if want_params {
                        geo.im2col(x.sample(b), &mut cols);
                        T::gemm(false, true, co, k, p, T::one(), dyb, &cols, T::one(), &mut dw);
                        for (c, row) in dyb.chunks(p).enumerate() {
                            db[c] = db[c] + row.iter().copied().sum::<T>();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        T::gemm(true, false, k, p, co, T::one(), weight.data(), dyb, T::zero(), &mut cols);
                        geo.col2im(&cols, dx.sample_mut(b));
                    }
                }
                let grads = if want_params {
                    vec![
                        NdArray::new(weight.shape().to_vec(), dw)?,
                        NdArray::new(vec![co], db)?,
                    ]
                } else {
                    Vec::new()
                };
                Ok((grads, dx))
            }
            Layer::LeakyRelu { slope } => Ok((
                Vec::new(),
                want_input
                    .then(|| x.zip_map(dy, |v, g| if v > T::zero() { g } else { g * *slope }))
                    .transpose()?,
            )),
            Layer::Tanh => Ok((
                Vec::new(),
                want_input
                    .then(|| y.zip_map(dy, |t, g| g * (T::one() - t * t)))
                    .transpose()?,
            )),
            Layer::AvgPool2d { size } => {
                if !want_input {
                    return Ok((Vec::new(), None));
                }
                let s = x.sample_shape();
                let (c, h, w) = (s[0], s[1], s[2]);
                let (oh, ow) = (h / size, w / size);
                let inv = T::one() / T::from_usize(size * size).unwrap();
                let mut dx = NdArray::zeros(x.shape());
                for b in 0..n {
                    let dys = dy.sample(b);
                    let dxs = dx.sample_mut(b);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = dys[(ch * oh + oy) * ow + ox] * inv;
                                for i in 0..*size {
                                    for j in 0..*size {
                                        dxs[(ch * h + oy * size + i) * w + ox * size + j] = g;
                                    }
                                }
                            }
                        }
                    }
                }
                Ok((Vec::new(), Some(dx)))
            }
            Layer::Softmax => {
                if !want_input {
                    return Ok((Vec::new(), None));
                }
                let s = x.sample_shape();
                let (c, inner) = (s[0], s[1..].iter().product::<usize>());
                let mut dx = vec![T::zero(); x.len()];
                let (yd, gd) = (y.data(), dy.data());
                for b in 0..n {
                    for r in 0..inner {
                        let base = b * c * inner + r;
                        let dot: T = (0..c).map(|j| yd[base + j * inner] * gd[base + j * inner]).sum();
                        for j in 0..c {
                            let idx = base + j * inner;
                            dx[idx] = yd[idx] * (gd[idx] - dot);
                        }
                    }
                }
                Ok((Vec::new(), Some(NdArray::new(x.shape().to_vec(), dx)?)))
            }
            Layer::Flatten => Ok((
                Vec::new(),
                want_input.then(|| dy.clone().reshape(x.shape())).transpose()?,
            )),
        }
    }

    fn direct_backward(
        &self,
        geo: &ConvGeometry,
        x: &NdArray<T>,
        weight: &NdArray<T>,
        dy: &NdArray<T>,
        want_params: bool,
        want_input: bool,
    ) -> Result<(Vec<NdArray<T>>, Option<NdArray<T>>)> {
        let (k, p, co) = (geo.col_rows(), geo.positions(), geo.c_out);
        let mut dw = vec![T::zero(); if want_params { co * k } else { 0 }];
        let mut db = vec![T::zero(); if want_params { co } else { 0 }];
        let mut dx = want_input.then(|| NdArray::zeros(x.shape()));
        for b in 0..x.batch() {
            let dyb = dy.sample(b);
            if want_params {
                geo.direct_weight_grad(x.sample(b), dyb, &mut dw);
                for (c, row) in dyb.chunks(p).enumerate() {
                    db[c] = db[c] + row.iter().copied().sum::<T>();
                }
            }
            if let Some(dx) = dx.as_mut() {
                geo.direct_input_grad(weight.data(), dyb, dx.sample_mut(b));
            }
        }
        let grads = if want_params {
            vec![NdArray::new(weight.shape().to_vec(), dw)?, NdArray::new(vec![co], db)?]
        } else {
            Vec::new()
        };
        Ok((grads, dx))
    }
}

/// In-place softmax over `count` entries spaced `stride` apart.
pub(crate) fn softmax_strided<T: Scalar>(v: &mut [T], count: usize, stride: usize) {
    let mut max = T::neg_infinity();
    for j in 0..count {
        max = max.max(v[j * stride]);
    }
    let mut total = T::zero();
    for j in 0..count {
        let e = (v[j * stride] - max).exp();
        v[j * stride] = e;
        total = total + e;
    }
    for j in 0..count {
        v[j * stride] = v[j * stride] / total;
    }
}

fn expect_rank(op: &'static str, shape: &[usize], rank: usize) -> Result<()> {
    if shape.len() != rank {
        return Err(DiffError::RankMismatch {
            op,
            expected: rank + 1,
            got: shape.len() + 1,
        });
    }
    Ok(())
}

/// `dim` counts the batch axis as dimension 0.
fn expect_dim(op: &'static str, dim: usize, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DiffError::ShapeMismatch {
            op,
            dim,
            expected,
            got,
        });
    }
    Ok(())
}

/// Dot product over eight interleaved partial sums, which the compiler can
/// keep in vector registers. The summation order is fixed, so results are
/// reproducible.
#[inline]
fn lane_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&u, &v)| u * v).sum();
    for (u, v) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + u[l] * v[l];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Convolutions with at most this many output channels skip im2col and
/// accumulate directly; a one-row product does not pay for the column buffer.
const DIRECT_MAX_OUT: usize = 2;

/// Convolution geometry; 2-D convolutions use a unit depth axis.
#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    out: [usize; 3],
    spatial: usize,
}

impl ConvGeometry {
    fn output_shape(&self) -> Vec<usize> {
        let mut s = vec![self.c_out];
        s.extend_from_slice(&self.out[3 - self.spatial..]);
        s
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(col_start, input_start, len)` for every in-bounds run of a
    /// patch row: column entries `col_start..col_start + len` read input
    /// elements `input_start + t * stride_w`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [id, ih, iw] = self.input;
        let [kd, kh, kw] = self.kernel;
        let [od, oh, ow] = self.out;
        let [sd, sh, sw] = self.stride;
        let [pd, ph, pw] = self.pad;
        let p = self.positions();
        for c in 0..self.c_in {
            for a in 0..kd {
                for i in 0..kh {
                    for j in 0..kw {
                        let row = ((c * kd + a) * kh + i) * kw + j;
                        // ox range with 0 <= ox * sw + j - pw < iw
                        let lo = pw.saturating_sub(j).div_ceil(sw);
                        let hi = if iw + pw > j { ((iw + pw - j - 1) / sw + 1).min(ow) } else { 0 };
                        if lo >= hi {
                            continue;
                        }
                        let x0 = lo * sw + j - pw;
                        for oz in 0..od {
                            let z = (oz * sd + a) as isize - pd as isize;
                            if z < 0 || z >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let y = (oy * sh + i) as isize - ph as isize;
                                if y < 0 || y >= ih as isize {
                                    continue;
                                }
                                let base_in = ((c * id + z as usize) * ih + y as usize) * iw;
                                let base_col = row * p + (oz * oh + oy) * ow;
                                f(base_col + lo, base_in + x0, hi - lo);
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        let sw = self.stride[2];
        self.for_each_run(|col, src, len| {
            let dst = &mut cols[col..col + len];
            if sw == 1 {
                dst.copy_from_slice(&x[src..src + len]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = x[src + t * sw];
                }
            }
        });
    }

    /// `y += W * im2col(x)` without materialising the columns.
    fn direct_forward<T: Scalar>(&self, x: &[T], w: &[T], y: &mut [T]) {
        let (k, p, sw) = (self.col_rows(), self.positions(), self.stride[2]);
        self.for_each_run(|col, src, len| {
            let (row, pos) = (col / p, col % p);
            for o in 0..self.c_out {
                let wv = w[o * k + row];
                let dst = &mut y[o * p + pos..o * p + pos + len];
                if sw == 1 {
                    for (d, &v) in dst.iter_mut().zip(&x[src..src + len]) {
                        *d = *d + wv * v;
                    }
                } else {
                    for (t, d) in dst.iter_mut().enumerate() {
                        *d = *d + wv * x[src + t * sw];
                    }
                }
            }
        });
    }

    /// `dw += dy * im2col(x)^T`.
    fn direct_weight_grad<T: Scalar>(&self, x: &[T], dy: &[T], dw: &mut [T]) {
        let (k, p, sw) = (self.col_rows(), self.positions(), self.stride[2]);
        self.for_each_run(|col, src, len| {
            let (row, pos) = (col / p, col % p);
            for o in 0..self.c_out {
                let g = &dy[o * p + pos..o * p + pos + len];
                let acc: T = if sw == 1 {
                    lane_dot(g, &x[src..src + len])
                } else {
                    g.iter().enumerate().map(|(t, &v)| v * x[src + t * sw]).sum()
                };
                dw[o * k + row] = dw[o * k + row] + acc;
            }
        });
    }

    /// `dx += col2im(W^T * dy)`.
    fn direct_input_grad<T: Scalar>(&self, w: &[T], dy: &[T], dx: &mut [T]) {
        let (k, p, sw) = (self.col_rows(), self.positions(), self.stride[2]);
        self.for_each_run(|col, dst, len| {
            let (row, pos) = (col / p, col % p);
            for o in 0..self.c_out {
                let wv = w[o * k + row];
                let g = &dy[o * p + pos..o * p + pos + len];
                if sw == 1 {
                    for (d, &v) in dx[dst..dst + len].iter_mut().zip(g) {
                        *d = *d + wv * v;
                    }
                } else {
                    for (t, &v) in g.iter().enumerate() {
                        dx[dst + t * sw] = dx[dst + t * sw] + wv * v;
                    }
                }
            }
        });
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let sw = self.stride[2];
        self.for_each_run(|col, dst, len| {
            let src = &cols[col..col + len];
            if sw == 1 {
                for (d, &v) in dx[dst..dst + len].iter_mut().zip(src) {
                    *d = *d + v;
                }
            } else {
                for (t, &v) in src.iter().enumerate() {
                    dx[dst + t * sw] = dx[dst + t * sw] + v;
                }
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_forward_is_matrix_vector_product() {
        let layer = Layer::Linear {
            weight: NdArray::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap(),
            bias: NdArray::zeros(&[2]),
        };
        let x = NdArray::new(vec![1, 2], vec![1.0f64, 1.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[2.0, 3.0]);
    }

    #[test]
    fn conv2d_output_shape_with_stride_and_padding() {
        let mut rng = crate::rng_from_seed(0);
        let layer = Layer::<f32>::conv2d(3, 16, 3, 2, 1, &mut rng);
        assert_eq!(layer.output_shape(&[3, 28, 28]).unwrap(), vec![16, 14, 14]);
        let err = layer.output_shape(&[2, 28, 28]).unwrap_err();
        assert!(matches!(err, DiffError::ShapeMismatch { dim: 1, expected: 3, got: 2, .. }));
    }

    #[test]
    fn direct_convolution_matches_im2col_products() {
        let mut rng = crate::rng_from_seed(5);
        for (layer, shape) in [
            (Layer::<f64>::conv3d(3, 2, 3, 1, 1, &mut rng), vec![3, 4, 5, 6]),
            (Layer::<f64>::conv2d(2, 1, 3, 2, 1, &mut rng), vec![2, 7, 9]),
            // rows longer than one eight-lane chunk
            (Layer::<f64>::conv3d(2, 1, 3, 1, 1, &mut rng), vec![2, 3, 4, 21]),
        ] {
            let geo = layer.conv_geometry(&shape).unwrap();
            let (k, p, co) = (geo.col_rows(), geo.positions(), geo.c_out);
            let n: usize = shape.iter().product();
            let x: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let w: Vec<f64> = (0..co * k).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
            let dy: Vec<f64> = (0..co * p).map(|i| ((i * 29 % 13) as f64 - 6.0) / 4.0).collect();
            let mut cols = vec![0.0; k * p];
            geo.im2col(&x, &mut cols);

            let mut y_ref = vec![0.0; co * p];
            f64::gemm(false, false, co, p, k, 1.0, &w, &cols, 0.0, &mut y_ref);
            let mut y = vec![0.0; co * p];
            geo.direct_forward(&x, &w, &mut y);

            let mut dw_ref = vec![0.0; co * k];
            f64::gemm(false, true, co, k, p, 1.0, &dy, &cols, 0.0, &mut dw_ref);
            let mut dw = vec![0.0; co * k];
            geo.direct_weight_grad(&x, &dy, &mut dw);

            let mut dcols = vec![0.0; k * p];
            f64::gemm(true, false, k, p, co, 1.0, &w, &dy, 0.0, &mut dcols);
            let mut dx_ref = vec![0.0; n];
            geo.col2im(&dcols, &mut dx_ref);
            let mut dx = vec![0.0; n];
            geo.direct_input_grad(&w, &dy, &mut dx);

            for (a, b) in [(&y, &y_ref), (&dw, &dw_ref), (&dx, &dx_ref)] {
                for (u, v) in a.iter().zip(b.iter()) {
                    assert!((u - v).abs() < 1e-12, "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn conv3d_output_shape() {
        let mut rng = crate::rng_from_seed(0);
        let layer = Layer::<f32>::conv3d(16, 8, 3, 1, 1, &mut rng);
        assert_eq!(layer.output_shape(&[16, 8, 16, 32]).unwrap(), vec![8, 8, 16, 32]);
    }

    #[test]
    fn avg_pool_rejects_indivisible_extent() {
        let layer = Layer::<f64>::AvgPool2d { size: 2 };
        assert!(layer.output_shape(&[1, 5, 4]).is_err());
        assert_eq!(layer.output_shape(&[1, 4, 6]).unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn softmax_sums_to_one_along_axis_one() {
        let x = NdArray::<f64>::from_fn(&[2, 3, 4], |i| (i as f64 * 0.7).sin() * 3.0);
        let y = Layer::Softmax.forward(&x).unwrap();
        for b in 0..2 {
            for r in 0..4 {
                let s: f64 = (0..3).map(|c| y.data()[b * 12 + c * 4 + r]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
