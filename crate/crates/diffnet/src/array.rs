use crate::error::{DiffError, Result};
use crate::scalar::Scalar;

/// Dense row-major array with shape metadata.
///
/// The leading axis is the batch axis for every model input and output.
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> NdArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size of the leading (batch) axis.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Shape without the leading axis.
    pub fn sample_shape(&self) -> &[usize] {
        if self.shape.is_empty() {
            &[]
        } else {
            &self.shape[1..]
        }
    }

    /// Number of elements per batch entry.
    pub fn sample_len(&self) -> usize {
        self.sample_shape().iter().product()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(DiffError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape.len() != other.shape.len() {
            return Err(DiffError::RankMismatch {
                op,
                expected: self.shape.len(),
                got: other.shape.len(),
            });
        }
        for (dim, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(DiffError::ShapeMismatch {
                    op,
                    dim,
                    expected: a,
                    got: b,
                });
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    /// L2 norm of the whole array, accumulated in f64.
    pub fn norm_l2(&self) -> f64 {
        norm_l2(&self.data)
    }

    /// Per-batch-entry L2 norms, accumulated in f64.
    pub fn sample_norms(&self) -> Vec<f64> {
        (0..self.batch()).map(|i| norm_l2(self.sample(i))).collect()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, what: impl Into<String>) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(DiffError::NonFinite { what: what.into() })
        }
    }

    pub fn cast<U: Scalar>(&self) -> NdArray<U> {
        NdArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Gathers batch entries in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let len = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        let mut shape = self.shape.clone();
        if shape.is_empty() {
            shape.push(indices.len());
        } else {
            shape[0] = indices.len();
        }
        Self { shape, data }
    }

    /// Concatenates arrays along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| {
            DiffError::InvalidConfig("concat_batch needs at least one array".into())
        })?;
        let tail = first.sample_shape().to_vec();
        let mut data = Vec::new();
        let mut batch = 0;
        for p in parts {
            if p.sample_shape() != tail.as_slice() {
                let dim = p
                    .sample_shape()
                    .iter()
                    .zip(&tail)
                    .position(|(a, b)| a != b)
                    .map_or(0, |d| d + 1);
                return Err(DiffError::ShapeMismatch {
                    op: "concat_batch",
                    dim,
                    expected: first.shape().get(dim).copied().unwrap_or(0),
                    got: p.shape().get(dim).copied().unwrap_or(0),
                });
            }
            batch += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&tail);
        Ok(Self { shape, data })
    }
}

pub(crate) fn norm_l2<T: Scalar>(v: &[T]) -> f64 {
    v.iter()
        .map(|&x| {
            let x = x.to_f64_lossy();
            x * x
        })
        .sum::<f64>()
        .sqrt()
}
