use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for bias-corrected Adam. Moments are created lazily on
/// the first step with the shapes of the parameters.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<NdArray<T>>,
    pub second_moment: Vec<NdArray<T>>,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            config,
        }
    }
}

/// One Adam update. Every gradient is checked before any parameter is
/// touched, so a rejected step leaves parameters and state unchanged.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut NdArray<T>],
    grads: &[NdArray<T>],
    names: &[String],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(DiffError::ShapeMismatch {
            op: "adam_step",
            dim: 0,
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        p.check_same_shape(g, "adam_step")?;
        if !g.all_finite() {
            return Err(DiffError::NonFiniteGradient {
                name: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            });
        }
    }
    if state.first_moment.is_empty() {
        state.first_moment = params.iter().map(|p| NdArray::zeros(p.shape())).collect();
        state.second_moment = state.first_moment.clone();
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(c.beta1);
    let b2 = T::from_f64_lossy(c.beta2);
    let one = T::one();
    let bias1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
    let bias2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
    let lr = T::from_f64_lossy(c.learning_rate);
    let eps = T::from_f64_lossy(c.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (one - b1) * gv;
            *vv = b2 * *vv + (one - b2) * gv * gv;
            let m_hat = *mv / bias1;
            let v_hat = *vv / bias2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = NdArray::from_vec(vec![0.0f64]);
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &[NdArray::from_vec(vec![1.0])], &names(1), &mut state).unwrap();
        let expected = 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] + expected).abs() < 1e-15);
        assert!((p.data()[0].abs() - 9.99e-4).abs() < 1e-6);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = NdArray::from_vec(vec![1.5f64, -2.0]);
        let mut state = AdamState::new(AdamConfig::default());
        adam_step(&mut [&mut p], &[NdArray::zeros(&[2])], &names(1), &mut state).unwrap();
        assert_eq!(p.data(), &[1.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn three_step_trajectory_matches_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let grads = [0.7f64, -1.3, 0.2];
        let mut p = NdArray::from_vec(vec![0.4f64]);
        let mut state = AdamState::new(cfg);
        // hand-rolled recurrence
        let (mut x, mut m, mut v) = (0.4f64, 0.0f64, 0.0f64);
        for (t, &g) in grads.iter().enumerate() {
            adam_step(&mut [&mut p], &[NdArray::from_vec(vec![g])], &names(1), &mut state).unwrap();
            let t = (t + 1) as i32;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= 0.05 * mh / (vh.sqrt() + 1e-8);
            assert!((p.data()[0] - x).abs() < 1e-10);
        }
        assert_eq!(state.step, 3);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_aborts() {
        let mut a = NdArray::from_vec(vec![1.0f32]);
        let mut b = NdArray::from_vec(vec![2.0f32]);
        let mut state = AdamState::new(AdamConfig::default());
        let grads = [NdArray::from_vec(vec![0.5]), NdArray::from_vec(vec![f32::NAN])];
        let err = adam_step(&mut [&mut a, &mut b], &grads, &names(2), &mut state).unwrap_err();
        assert_eq!(err, DiffError::NonFiniteGradient { name: "p1".into() });
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(state.step, 0);
    }
}
