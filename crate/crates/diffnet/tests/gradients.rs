use diffnet::gradcheck::{grad_check, primitive_suite, GradCheckReport};
use diffnet::{
    Backward, DiffModel, Layer, NdArray, ParamsMut, Result, Sequential, SequentialTrace, Want,
};
use proptest::prelude::*;
use rand::Rng;

fn convnet(seed: u64, smooth: bool) -> Sequential<f64> {
    let mut rng = diffnet::rng_from_seed(seed);
    let act = || if smooth { Layer::Tanh } else { Layer::leaky_relu() };
    Sequential::new(
        &[1, 8, 8],
        vec![
            Layer::conv2d(1, 3, 3, 1, 1, &mut rng),
            act(),
            Layer::conv2d(3, 4, 3, 2, 1, &mut rng),
            act(),
            Layer::AvgPool2d { size: 2 },
            Layer::Flatten,
            Layer::linear(16, 5, &mut rng),
        ],
    )
    .unwrap()
}

fn random_input(shape: &[usize], seed: u64) -> NdArray<f64> {
    let mut rng = diffnet::rng_from_seed(seed);
    NdArray::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn every_primitive_passes_finite_differences_on_twenty_instances() {
    for (op, report) in primitive_suite(20, 11, 1e-5, 1e-4).unwrap() {
        assert!(report.passed, "{op}: {report:?}");
    }
}

#[test]
fn smooth_convnet_passes_gradient_check() {
    let m = convnet(4, true);
    let x = random_input(&[2, 1, 8, 8], 5);
    let report = grad_check(&m, &x, 1e-5, 1e-4).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn convnet_input_vjp_matches_finite_differences_of_sum() {
    let m = convnet(6, false);
    let x = random_input(&[1, 1, 8, 8], 7);
    let out_shape = m.forward(&x).unwrap().shape().to_vec();
    let g = m.input_vjp(&x, &NdArray::ones(&out_shape)).unwrap();
    let numeric = diffnet::gradcheck::central_difference(
        |v| {
            let probe = NdArray::new(x.shape().to_vec(), v.to_vec()).unwrap();
            m.forward(&probe).unwrap().sum()
        },
        x.data(),
        1e-5,
    );
    let (err, _) = diffnet::gradcheck::max_relative_error(g.data(), &numeric);
    assert!(err < 1e-4, "max rel err {err}");
}

#[test]
fn zero_cotangent_gives_zero_input_gradient() {
    let m = convnet(8, false);
    let x = random_input(&[3, 1, 8, 8], 9);
    let g = m.input_vjp(&x, &NdArray::zeros(&[3, 5])).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

/// Straight-line reimplementation of the convnet forward pass.
fn reference_forward(m: &Sequential<f64>, x: &[f64]) -> Vec<f64> {
    let mut shape = vec![1usize, 8, 8];
    let mut act = x.to_vec();
    for layer in m.layers() {
        match layer {
            Layer::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => {
                let (co, ci, k) = (weight.shape()[0], weight.shape()[1], weight.shape()[2]);
                let (h, w) = (shape[1], shape[2]);
                let oh = (h + 2 * padding - k) / stride + 1;
                let ow = (w + 2 * padding - k) / stride + 1;
                let mut out = vec![0.0; co * oh * ow];
                for o in 0..co {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut acc = bias.data()[o];
                            for c in 0..ci {
                                for i in 0..k {
                                    for j in 0..k {
                                        let iy = (y * stride + i) as i64 - *padding as i64;
                                        let ix = (xx * stride + j) as i64 - *padding as i64;
                                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                            acc += weight.data()[((o * ci + c) * k + i) * k + j]
                                                * act[(c * h + iy as usize) * w + ix as usize];
                                        }
                                    }
                                }
                            }
                            out[(o * oh + y) * ow + xx] = acc;
                        }
                    }
                }
                act = out;
                shape = vec![co, oh, ow];
            }
            Layer::LeakyRelu { slope } => {
                act = act.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
            }
            Layer::AvgPool2d { size } => {
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / size, w / size);
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut s = 0.0;
                            for i in 0..*size {
                                for j in 0..*size {
                                    s += act[(ch * h + y * size + i) * w + xx * size + j];
                                }
                            }
                            out[(ch * oh + y) * ow + xx] = s / (size * size) as f64;
                        }
                    }
                }
                act = out;
                shape = vec![c, oh, ow];
            }
            Layer::Flatten => shape = vec![act.len()],
            Layer::Linear { weight, bias } => {
                let (o, i) = (weight.shape()[0], weight.shape()[1]);
                act = (0..o)
                    .map(|r| bias.data()[r] + (0..i).map(|c| weight.data()[r * i + c] * act[c]).sum::<f64>())
                    .collect();
                shape = vec![o];
            }
            other => panic!("reference does not cover {}", other.name()),
        }
    }
    act
}

#[test]
fn convnet_forward_matches_straight_line_reference() {
    let m = convnet(10, false);
    let x = random_input(&[4, 1, 8, 8], 12);
    let y = m.forward(&x).unwrap();
    for b in 0..4 {
        let expect = reference_forward(&m, x.sample(b));
        for (a, e) in y.sample(b).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
    }
}

#[test]
fn forward_is_deterministic_and_bit_identical_in_f32() {
    let m: Sequential<f32> = convnet(13, false).cast();
    let x: NdArray<f32> = random_input(&[2, 1, 8, 8], 14).cast();
    let a = m.forward(&x).unwrap();
    let b = m.forward(&x).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

/// Wraps a model and scales its parameter gradients by 1.1.
#[derive(Clone)]
struct Corrupted(Sequential<f64>);

impl DiffModel<f64> for Corrupted {
    type Trace = SequentialTrace<f64>;
    fn input_shape(&self) -> &[usize] {
        self.0.input_shape()
    }
    fn output_shape(&self) -> &[usize] {
        self.0.output_shape()
    }
    fn forward_trace(&self, x: &NdArray<f64>) -> Result<(NdArray<f64>, Self::Trace)> {
        self.0.forward_trace(x)
    }
    fn backward(&self, t: &Self::Trace, c: &NdArray<f64>, want: Want) -> Result<Backward<f64>> {
        let mut b = self.0.backward(t, c, want)?;
        for g in &mut b.params {
            *g = g.scale(1.1);
        }
        Ok(b)
    }
    fn params(&self) -> Vec<&NdArray<f64>> {
        self.0.params()
    }
    fn param_names(&self) -> Vec<String> {
        self.0.param_names()
    }
}

impl ParamsMut<f64> for Corrupted {
    fn params_mut(&mut self) -> Vec<&mut NdArray<f64>> {
        self.0.params_mut()
    }
}

#[test]
fn corrupted_gradient_rule_is_reported() {
    let m = Corrupted(convnet(15, true));
    let x = random_input(&[1, 1, 8, 8], 16);
    let report: GradCheckReport = grad_check(&m, &x, 1e-5, 1e-4).unwrap();
    assert!(!report.passed);
    assert!(report.max_rel_err_params > 0.05);
    assert!(report.worst.starts_with("param"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn input_vjp_is_linear_in_cotangent(seed in 0u64..1000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let m = convnet(seed, false);
        let x = random_input(&[2, 1, 8, 8], seed + 1);
        let c1 = random_input(&[2, 5], seed + 2);
        let c2 = random_input(&[2, 5], seed + 3);
        let mut combo = c1.scale(a);
        combo.axpy(b, &c2).unwrap();
        let lhs = m.input_vjp(&x, &combo).unwrap();
        let mut rhs = m.input_vjp(&x, &c1).unwrap().scale(a);
        rhs.axpy(b, &m.input_vjp(&x, &c2).unwrap()).unwrap();
        let scale = rhs.max_abs().max(1e-12);
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() <= 1e-6 * scale);
        }
    }
}
