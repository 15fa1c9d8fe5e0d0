use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::model::DiffModel;
use crate::scalar::Scalar;

/// Dense Jacobian `[outputs, inputs]` of a model at a single sample, built
/// one row at a time from input VJPs with one-hot cotangents.
pub fn jacobian<T: Scalar, M: DiffModel<T>>(model: &M, x: &NdArray<T>) -> Result<NdArray<T>> {
    if x.batch() != 1 {
        return Err(DiffError::ShapeMismatch {
            op: "jacobian",
            dim: 0,
            expected: 1,
            got: x.batch(),
        });
    }
    let out_shape = model.forward(x)?.shape().to_vec();
    let outputs: usize = out_shape.iter().product();
    let inputs = x.len();
    let mut data = Vec::with_capacity(outputs * inputs);
    let mut cot = NdArray::zeros(&out_shape);
    for k in 0..outputs {
        cot.data_mut()[k] = T::one();
        data.extend_from_slice(model.input_vjp(x, &cot)?.data());
        cot.data_mut()[k] = T::zero();
    }
    NdArray::new(vec![outputs, inputs], data)
}
