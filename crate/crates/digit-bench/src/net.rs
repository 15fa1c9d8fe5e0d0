use std::fmt;
use std::str::FromStr;

use diffnet::{DiffModel, Layer, NdArray, Sequential};

use crate::dataset::NUM_CLASSES;
use crate::error::{DigitError, Result};

pub const INPUT_SHAPE: [usize; 3] = [3, 28, 28];
/// Width of the representation between neck and classifier.
pub const LATENT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Erm,
    Ib,
    Rib,
    Itsa,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Erm, Method::Ib, Method::Rib, Method::Itsa];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Ib => "ib",
            Method::Rib => "rib",
            Method::Itsa => "itsa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = DigitError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| DigitError::InvalidConfig(format!("unknown digit method {s:?}")))
    }
}

/// Representation between neck and classifier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bottleneck {
    Deterministic,
    /// Neck emits mean and pre-softplus scale; `z = mu + softplus(rho) * eta`.
    Variational,
    /// Neck emits the mean; `z = mu + sigma * eta` with fixed `sigma`.
    FixedSigma(f64),
}

/// Conv feature extractor, neck to the latent, classifier head.
#[derive(Clone, Debug)]
pub struct DigitNet {
    pub extractor: Sequential<f32>,
    pub neck: Sequential<f32>,
    pub classifier: Sequential<f32>,
    pub bottleneck: Bottleneck,
}

impl DigitNet {
    pub fn new(bottleneck: Bottleneck, seed: u64) -> Result<Self> {
        let mut rng = diffnet::rng_from_seed(seed);
        let extractor = Sequential::new(
            &INPUT_SHAPE,
            vec![
                Layer::conv2d(3, 16, 3, 2, 1, &mut rng),
                Layer::leaky_relu(),
                Layer::conv2d(16, 32, 3, 2, 1, &mut rng),
                Layer::leaky_relu(),
            ],
        )?;
        let features: usize = extractor.output_shape().iter().product();
        let neck_out = match bottleneck {
            Bottleneck::Variational => 2 * LATENT,
            _ => LATENT,
        };
        let mut neck_linear = Layer::linear(features, neck_out, &mut rng);
        if bottleneck == Bottleneck::Variational {
            // start the scale branch near softplus(-3), a small initial noise level
            if let Layer::Linear { bias, .. } = &mut neck_linear {
                bias.data_mut()[LATENT..].iter_mut().for_each(|b| *b = -3.0);
            }
        }
        let neck = Sequential::new(extractor.output_shape(), vec![Layer::Flatten, neck_linear])?;
        let classifier = Sequential::new(
            &[LATENT],
            vec![Layer::leaky_relu(), Layer::linear(LATENT, NUM_CLASSES, &mut rng)],
        )?;
        Ok(Self { extractor, neck, classifier, bottleneck })
    }

    /// Deterministic logits (latent mean) for standardised inputs.
    pub fn logits(&self, x: &NdArray<f32>) -> Result<NdArray<f32>> {
        let h = self.neck.forward(&self.extractor.forward(x)?)?;
        let mu = match self.bottleneck {
            Bottleneck::Variational => split_columns(&h, LATENT).0,
            _ => h,
        };
        Ok(self.classifier.forward(&mu)?)
    }

    pub fn params(&self) -> Vec<&NdArray<f32>> {
        let mut p = self.extractor.params();
        p.extend(self.neck.params());
        p.extend(self.classifier.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut NdArray<f32>> {
        use diffnet::ParamsMut;
        let mut p = self.extractor.params_mut();
        p.extend(self.neck.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, m) in [("extractor", &self.extractor), ("neck", &self.neck), ("classifier", &self.classifier)] {
            names.extend(m.param_names().into_iter().map(|n| format!("{prefix}.{n}")));
        }
        names
    }
}

/// Splits `[n, a + b]` into `[n, a]` and `[n, b]`.
pub fn split_columns(x: &NdArray<f32>, a: usize) -> (NdArray<f32>, NdArray<f32>) {
    let n = x.batch();
    let w = x.sample_len();
    let mut left = Vec::with_capacity(n * a);
    let mut right = Vec::with_capacity(n * (w - a));
    for i in 0..n {
        let s = x.sample(i);
        left.extend_from_slice(&s[..a]);
        right.extend_from_slice(&s[a..]);
    }
    (
        NdArray::new(vec![n, a], left).expect("split sizes"),
        NdArray::new(vec![n, w - a], right).expect("split sizes"),
    )
}

/// Inverse of [`split_columns`].
pub fn join_columns(left: &NdArray<f32>, right: &NdArray<f32>) -> NdArray<f32> {
    let n = left.batch();
    let (a, b) = (left.sample_len(), right.sample_len());
    let mut data = Vec::with_capacity(n * (a + b));
    for i in 0..n {
        data.extend_from_slice(left.sample(i));
        data.extend_from_slice(right.sample(i));
    }
    NdArray::new(vec![n, a + b], data).expect("join sizes")
}
