//! Task losses returning their value together with the gradient with
//! respect to the prediction.

use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::layer::softmax_strided;
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad: NdArray<T>,
}

/// Huber-style penalty with unit transition: `0.5 d^2` for `|d| < 1`,
/// `|d| - 0.5` otherwise.
pub fn smooth_l1_scalar<T: Scalar>(d: T) -> T {
    let half = T::from_f64_lossy(0.5);
    if d.abs() < T::one() {
        half * d * d
    } else {
        d.abs() - half
    }
}

pub fn smooth_l1_derivative<T: Scalar>(d: T) -> T {
    if d.abs() < T::one() {
        d
    } else {
        d.signum()
    }
}

/// Mean smooth-L1 over elements where `mask != 0`; zero for an empty mask.
pub fn smooth_l1<T: Scalar>(
    pred: &NdArray<T>,
    target: &NdArray<T>,
    mask: &NdArray<T>,
) -> Result<LossOutput<T>> {
    pred.check_same_shape(target, "smooth_l1")?;
    pred.check_same_shape(mask, "smooth_l1")?;
    let count = mask.data().iter().filter(|&&m| m != T::zero()).count();
    let mut grad = NdArray::zeros(pred.shape());
    if count == 0 {
        return Ok(LossOutput {
            value: T::zero(),
            grad,
        });
    }
    let inv = T::one() / T::from_usize(count).unwrap();
    let mut total = T::zero();
    for (((g, &p), &t), &m) in grad
        .data_mut()
        .iter_mut()
        .zip(pred.data())
        .zip(target.data())
        .zip(mask.data())
    {
        if m != T::zero() {
            let d = p - t;
            total = total + smooth_l1_scalar(d);
            *g = smooth_l1_derivative(d) * inv;
        }
    }
    Ok(LossOutput {
        value: total * inv,
        grad,
    })
}

/// Mean softmax cross-entropy of `logits` (`[n, classes]`) against labels.
pub fn cross_entropy<T: Scalar>(logits: &NdArray<T>, labels: &[usize]) -> Result<LossOutput<T>> {
    if logits.ndim() != 2 {
        return Err(DiffError::RankMismatch {
            op: "cross_entropy",
            expected: 2,
            got: logits.ndim(),
        });
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(DiffError::ShapeMismatch {
            op: "cross_entropy",
            dim: 0,
            expected: n,
            got: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(DiffError::InvalidConfig(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let mut probs = logits.data().to_vec();
    let mut total = T::zero();
    let inv = T::one() / T::from_usize(n.max(1)).unwrap();
    for (row, &label) in probs.chunks_mut(c).zip(labels) {
        softmax_strided(row, c, 1);
        total = total - row[label].max(T::min_positive_value()).ln();
        row[label] = row[label] - T::one();
        for v in row.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok(LossOutput {
        value: total * inv,
        grad: NdArray::new(logits.shape().to_vec(), probs)?,
    })
}

/// Index of the largest entry in each row of a `[n, classes]` array.
pub fn argmax_rows<T: Scalar>(logits: &NdArray<T>) -> Vec<usize> {
    let c = logits.sample_len();
    logits
        .data()
        .chunks(c.max(1))
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}
