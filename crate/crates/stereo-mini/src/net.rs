use diffnet::loss::smooth_l1;
use diffnet::{DiffModel, Layer, NdArray, ParamsMut, Scalar, Sequential, SequentialTrace, Want};

use crate::error::{Result, StereoError};
use crate::volume::{build_cost_volume, cost_volume_backward, soft_argmin, soft_argmin_backward, upsample, upsample_backward};

/// Downsampling factor of the feature extractor (two stride-2 convolutions).
pub const FEATURE_STRIDE: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct StereoNetConfig {
    pub height: usize,
    pub width: usize,
    /// Full-resolution search range; `max_disparity / 4` cost levels.
    pub max_disparity: usize,
    pub hidden_channels: usize,
    pub feature_channels: usize,
    pub aggregator_channels: usize,
}

impl Default for StereoNetConfig {
    fn default() -> Self {
        Self { height: 64, width: 128, max_disparity: 32, hidden_channels: 32, feature_channels: 16, aggregator_channels: 32 }
    }
}

impl StereoNetConfig {
    pub fn levels(&self) -> usize {
        self.max_disparity / FEATURE_STRIDE
    }

    pub fn validate(&self) -> Result<()> {
        let s = FEATURE_STRIDE;
        if self.height % s != 0 || self.width % s != 0 || self.height == 0 || self.width == 0 {
            return Err(StereoError::InvalidConfig(format!(
                "image {}x{} must be a non-empty multiple of the feature stride {s}",
                self.height, self.width
            )));
        }
        if self.max_disparity % s != 0 || self.levels() < 2 || self.levels() > self.width / s {
            return Err(StereoError::InvalidConfig(format!(
                "max_disparity {} must be a multiple of {s} giving 2..={} levels",
                self.max_disparity,
                self.width / s
            )));
        }
        if self.hidden_channels == 0 || self.feature_channels == 0 || self.aggregator_channels == 0 {
            return Err(StereoError::InvalidConfig("channel counts must be positive".into()));
        }
        Ok(())
    }
}

/// Shared feature extractor, concatenation cost volume, 3-D convolutional
/// aggregator producing matching costs, and soft-argmin regression.
///
/// The first aggregator layer is pointwise. A 3x3x3 kernel there sees the
/// zero padding at both ends of the disparity axis and learns a position
/// prior that overrides the matching evidence.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoNet<T> {
    pub extractor: Sequential<T>,
    pub aggregator: Sequential<T>,
    pub config: StereoNetConfig,
}

/// Intermediate values of the matching head.
pub struct HeadTrace<T> {
    cost: NdArray<T>,
    aggregator: SequentialTrace<T>,
}

impl<T: Scalar> StereoNet<T> {
    pub fn new(config: StereoNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = diffnet::rng_from_seed(seed);
        let (hc, fc, ac) = (config.hidden_channels, config.feature_channels, config.aggregator_channels);
        let extractor = Sequential::new(
            &[3, config.height, config.width],
            vec![
                Layer::conv2d(3, hc, 3, 2, 1, &mut rng),
                Layer::leaky_relu(),
                Layer::conv2d(hc, hc, 3, 2, 1, &mut rng),
                Layer::leaky_relu(),
                Layer::conv2d(hc, fc, 3, 1, 1, &mut rng),
            ],
        )?;
        let (h, w) = (config.height / FEATURE_STRIDE, config.width / FEATURE_STRIDE);
        let aggregator = Sequential::new(
            &[2 * fc, config.levels(), h, w],
            vec![Layer::conv3d(2 * fc, ac, 1, 1, 0, &mut rng), Layer::leaky_relu(), Layer::conv3d(ac, 1, 3, 1, 1, &mut rng)],
        )?;
        Ok(Self { extractor, aggregator, config })
    }

    pub fn cast<U: Scalar>(&self) -> StereoNet<U> {
        StereoNet { extractor: self.extractor.cast(), aggregator: self.aggregator.cast(), config: self.config.clone() }
    }

    pub fn params(&self) -> Vec<&NdArray<T>> {
        let mut p = self.extractor.params();
        p.extend(self.aggregator.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut NdArray<T>> {
        let mut p = self.extractor.params_mut();
        p.extend(self.aggregator.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut n: Vec<String> = self.extractor.param_names().into_iter().map(|s| format!("extractor.{s}")).collect();
        n.extend(self.aggregator.param_names().into_iter().map(|s| format!("aggregator.{s}")));
        n
    }

    /// Full-resolution disparity `[B, H, W]` from left and right features.
    pub fn head_forward(&self, z_l: &NdArray<T>, z_r: &NdArray<T>) -> Result<(NdArray<T>, HeadTrace<T>)> {
        let volume = build_cost_volume(z_l, z_r, self.config.levels())?;
        let (cost, aggregator) = self.aggregator.forward_trace(&volume)?;
        let coarse = soft_argmin(&cost)?;
        let s = FEATURE_STRIDE;
        let pred = upsample(&coarse, s, T::from_usize(s).unwrap())?;
        Ok((pred, HeadTrace { cost, aggregator }))
    }

    /// Returns `(d z_l, d z_r, aggregator parameter gradients)`.
    pub fn head_backward(&self, trace: &HeadTrace<T>, grad: &NdArray<T>) -> Result<(NdArray<T>, NdArray<T>, Vec<NdArray<T>>)> {
        let s = FEATURE_STRIDE;
        let (h, w) = (self.config.height / s, self.config.width / s);
        let d_coarse = upsample_backward(grad, h, w, s, T::from_usize(s).unwrap())?;
        let d_cost = soft_argmin_backward(&trace.cost, &d_coarse)?;
        let b = self.aggregator.backward(&trace.aggregator, &d_cost, Want::ALL)?;
        let d_volume = b.input.expect("input gradient requested");
        let (gl, gr) = cost_volume_backward(&d_volume, self.config.feature_channels, self.config.levels())?;
        Ok((gl, gr, b.params))
    }

    pub fn predict(&self, left: &NdArray<T>, right: &NdArray<T>) -> Result<NdArray<T>> {
        let z_l = self.extractor.forward(left)?;
        let z_r = self.extractor.forward(right)?;
        Ok(self.head_forward(&z_l, &z_r)?.0)
    }

    /// Smooth-L1 task on the two views' features: loss, feature gradients
    /// and aggregator gradients.
    pub fn task(&self, z_l: &NdArray<T>, z_r: &NdArray<T>, gt: &NdArray<T>, mask: &NdArray<T>) -> Result<(f64, NdArray<T>, NdArray<T>, Vec<NdArray<T>>)> {
        let (pred, trace) = self.head_forward(z_l, z_r)?;
        let l = smooth_l1(&pred, gt, mask)?;
        let (gl, gr, agg) = self.head_backward(&trace, &l.grad)?;
        Ok((l.value.to_f64_lossy(), gl, gr, agg))
    }

    /// Plain supervised loss and gradients for all parameters, ordered as
    /// [`StereoNet::params`]. Extractor gradients are the left view's plus the
    /// right view's.
    pub fn loss_and_grads(&self, left: &NdArray<T>, right: &NdArray<T>, gt: &NdArray<T>, mask: &NdArray<T>) -> Result<(f64, Vec<NdArray<T>>)> {
        let (z_l, tl) = self.extractor.forward_trace(left)?;
        let (z_r, tr) = self.extractor.forward_trace(right)?;
        let (loss, gl, gr, agg) = self.task(&z_l, &z_r, gt, mask)?;
        let mut grads = self.extractor.backward(&tl, &gl, Want::PARAMS)?.params;
        let right_grads = self.extractor.backward(&tr, &gr, Want::PARAMS)?.params;
        for (a, g) in grads.iter_mut().zip(&right_grads) {
            a.add_assign(g)?;
        }
        grads.extend(agg);
        Ok((loss, grads))
    }
}
