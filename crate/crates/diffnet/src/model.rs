use crate::array::NdArray;
use crate::error::{DiffError, Result};
use crate::layer::Layer;
use crate::scalar::Scalar;

/// Which gradients a backward pass should produce.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Want {
    pub params: bool,
    pub input: bool,
}

impl Want {
    pub const ALL: Want = Want {
        params: true,
        input: true,
    };
    pub const PARAMS: Want = Want {
        params: true,
        input: false,
    };
    pub const INPUT: Want = Want {
        params: false,
        input: true,
    };
}

/// Result of a backward pass. `params` is empty unless requested and
/// otherwise aligned with [`DiffModel::params`].
#[derive(Clone, Debug)]
pub struct Backward<T> {
    pub params: Vec<NdArray<T>>,
    pub input: Option<NdArray<T>>,
}

/// A parameterised differentiable function of a batch.
pub trait DiffModel<T: Scalar> {
    type Trace;

    /// Per-sample input shape (no batch axis).
    fn input_shape(&self) -> &[usize];

    /// Per-sample output shape (no batch axis).
    fn output_shape(&self) -> &[usize];

    fn forward_trace(&self, x: &NdArray<T>) -> Result<(NdArray<T>, Self::Trace)>;

    fn backward(&self, trace: &Self::Trace, cotangent: &NdArray<T>, want: Want)
        -> Result<Backward<T>>;

    fn params(&self) -> Vec<&NdArray<T>>;

    fn param_names(&self) -> Vec<String>;

    fn forward(&self, x: &NdArray<T>) -> Result<NdArray<T>> {
        Ok(self.forward_trace(x)?.0)
    }

    /// `J^T * cotangent` for the Jacobian of `forward` at `x`.
    fn input_vjp(&self, x: &NdArray<T>, cotangent: &NdArray<T>) -> Result<NdArray<T>> {
        let (_, trace) = self.forward_trace(x)?;
        let g = self
            .backward(&trace, cotangent, Want::INPUT)?
            .input
            .expect("input gradient requested");
        g.ensure_finite("input gradient")?;
        Ok(g)
    }

    /// Parameter gradients of `<cotangent, forward(x)>`.
    fn param_grads(&self, x: &NdArray<T>, cotangent: &NdArray<T>) -> Result<Vec<NdArray<T>>> {
        let (_, trace) = self.forward_trace(x)?;
        Ok(self.backward(&trace, cotangent, Want::PARAMS)?.params)
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub trait ParamsMut<T> {
    fn params_mut(&mut self) -> Vec<&mut NdArray<T>>;
}

impl<T: Scalar, M: DiffModel<T> + ?Sized> DiffModel<T> for &M {
    type Trace = M::Trace;

    fn input_shape(&self) -> &[usize] {
        (**self).input_shape()
    }

    fn output_shape(&self) -> &[usize] {
        (**self).output_shape()
    }

    fn forward_trace(&self, x: &NdArray<T>) -> Result<(NdArray<T>, Self::Trace)> {
        (**self).forward_trace(x)
    }

    fn backward(
        &self,
        trace: &Self::Trace,
        cotangent: &NdArray<T>,
        want: Want,
    ) -> Result<Backward<T>> {
        (**self).backward(trace, cotangent, want)
    }

    fn params(&self) -> Vec<&NdArray<T>> {
        (**self).params()
    }

    fn param_names(&self) -> Vec<String> {
        (**self).param_names()
    }
}

pub(crate) fn check_batch_shape<T: Scalar>(
    op: &'static str,
    expected: &[usize],
    x: &NdArray<T>,
) -> Result<()> {
    if x.ndim() != expected.len() + 1 {
        return Err(DiffError::RankMismatch {
            op,
            expected: expected.len() + 1,
            got: x.ndim(),
        });
    }
    for (i, (&e, &g)) in expected.iter().zip(x.sample_shape()).enumerate() {
        if e != g {
            return Err(DiffError::ShapeMismatch {
                op,
                dim: i + 1,
                expected: e,
                got: g,
            });
        }
    }
    Ok(())
}

/// Static chain of primitive layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    // shapes[0] is the input shape, shapes[i + 1] the output of layer i
    shapes: Vec<Vec<usize>>,
}

/// Activations recorded by [`Sequential::forward_trace`].
#[derive(Clone, Debug)]
pub struct SequentialTrace<T> {
    activations: Vec<NdArray<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(input_shape: &[usize], layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shapes = vec![input_shape.to_vec()];
        for layer in &layers {
            let next = layer.output_shape(shapes.last().unwrap())?;
            shapes.push(next);
        }
        Ok(Self { layers, shapes })
    }

    /// Model with no layers: `forward(x) == x`.
    pub fn identity(shape: &[usize]) -> Self {
        Self {
            layers: Vec::new(),
            shapes: vec![shape.to_vec()],
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Per-sample shape after each layer, starting with the input.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn cast<U: Scalar>(&self) -> Sequential<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear { weight, bias } => Layer::Linear {
                    weight: weight.cast(),
                    bias: bias.cast(),
                },
                Layer::Conv2d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => Layer::Conv2d {
                    weight: weight.cast(),
                    bias: bias.cast(),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::Conv3d {
                    weight,
                    bias,
                    stride,
                    padding,
                } => Layer::Conv3d {
                    weight: weight.cast(),
                    bias: bias.cast(),
                    stride: *stride,
                    padding: *padding,
                },
                Layer::LeakyRelu { slope } => Layer::LeakyRelu {
                    slope: U::from_f64_lossy(slope.to_f64_lossy()),
                },
                Layer::Tanh => Layer::Tanh,
                Layer::AvgPool2d { size } => Layer::AvgPool2d { size: *size },
                Layer::Softmax => Layer::Softmax,
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        Sequential {
            layers,
            shapes: self.shapes.clone(),
        }
    }
}

impl<T: Scalar> DiffModel<T> for Sequential<T> {
    type Trace = SequentialTrace<T>;

    fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    fn forward_trace(&self, x: &NdArray<T>) -> Result<(NdArray<T>, Self::Trace)> {
        check_batch_shape("forward", self.input_shape(), x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap())?;
            activations.push(next);
        }
        let out = activations.last().unwrap().clone();
        Ok((out, SequentialTrace { activations }))
    }

    fn backward(
        &self,
        trace: &Self::Trace,
        cotangent: &NdArray<T>,
        want: Want,
    ) -> Result<Backward<T>> {
        let out = trace.activations.last().unwrap();
        cotangent.check_same_shape(out, "backward")?;
        let mut per_layer: Vec<Vec<NdArray<T>>> = vec![Vec::new(); self.layers.len()];
        let mut grad = cotangent.clone();
        let mut input = None;
        // lowest layer index that still needs an input gradient
        let first_needed = if want.input {
            0
        } else {
            self.layers
                .iter()
                .position(|l| !l.params().is_empty())
                .unwrap_or(self.layers.len())
        };
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_input = want.input || i > first_needed;
            let (g_params, g_in) = layer.backward(
                &trace.activations[i],
                &trace.activations[i + 1],
                &grad,
                want.params,
                need_input,
            )?;
            per_layer[i] = g_params;
            match g_in {
                Some(g) => grad = g,
                None => break,
            }
            if i == 0 {
                input = Some(std::mem::replace(&mut grad, NdArray::zeros(&[0])));
            }
        }
        if self.layers.is_empty() && want.input {
            input = Some(grad);
        }
        Ok(Backward {
            params: if want.params {
                per_layer.into_iter().flatten().collect()
            } else {
                Vec::new()
            },
            input: if want.input { input } else { None },
        })
    }

    fn params(&self) -> Vec<&NdArray<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.params().len();
            for suffix in ["weight", "bias"].iter().take(n) {
                names.push(format!("{i}.{suffix}"));
            }
        }
        names
    }
}

impl<T: Scalar> ParamsMut<T> for Sequential<T> {
    fn params_mut(&mut self) -> Vec<&mut NdArray<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Composition `second(first(x))`.
#[derive(Clone, Debug)]
pub struct Chain<A, B> {
    pub first: A,
    pub second: B,
}

impl<A, B> Chain<A, B> {
    pub fn new(first: A, second: B) -> Self {
        Self { first, second }
    }
}

impl<T: Scalar, A: DiffModel<T>, B: DiffModel<T>> DiffModel<T> for Chain<A, B> {
    type Trace = (A::Trace, B::Trace);

    fn input_shape(&self) -> &[usize] {
        self.first.input_shape()
    }

    fn output_shape(&self) -> &[usize] {
        self.second.output_shape()
    }

    fn forward_trace(&self, x: &NdArray<T>) -> Result<(NdArray<T>, Self::Trace)> {
        let (mid, ta) = self.first.forward_trace(x)?;
        let (out, tb) = self.second.forward_trace(&mid)?;
        Ok((out, (ta, tb)))
    }

    fn backward(
        &self,
        trace: &Self::Trace,
        cotangent: &NdArray<T>,
        want: Want,
    ) -> Result<Backward<T>> {
        let second = self.second.backward(
            &trace.1,
            cotangent,
            Want {
                params: want.params,
                input: true,
            },
        )?;
        let mid = second.input.expect("input gradient requested");
        let first = self.first.backward(&trace.0, &mid, want)?;
        let mut params = first.params;
        params.extend(second.params);
        Ok(Backward {
            params,
            input: first.input,
        })
    }

    fn params(&self) -> Vec<&NdArray<T>> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .first
            .param_names()
            .into_iter()
            .map(|n| format!("first.{n}"))
            .collect();
        names.extend(self.second.param_names().into_iter().map(|n| format!("second.{n}")));
        names
    }
}

impl<T, A: ParamsMut<T>, B: ParamsMut<T>> ParamsMut<T> for Chain<A, B> {
    fn params_mut(&mut self) -> Vec<&mut NdArray<T>> {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        p
    }
}
