//! Central finite-difference verification of analytic gradients.

use rand::Rng as _;

use crate::array::NdArray;
use crate::error::Result;
use crate::model::{DiffModel, ParamsMut, Want};

/// Central differences of a scalar function at `point`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            probe[i] = point[i] + h;
            let plus = f(&probe);
            probe[i] = point[i] - h;
            let minus = f(&probe);
            probe[i] = point[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest elementwise relative error between two gradient vectors.
///
/// Each difference is divided by the larger magnitude of the two entries,
/// floored at `1e-3` of the largest reference magnitude so that entries that
/// are numerically zero do not dominate the measure.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric
        .iter()
        .chain(analytic)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale + 1e-12;
    analytic
        .iter()
        .zip(numeric)
        .enumerate()
        .map(|(i, (a, n))| ((a - n).abs() / a.abs().max(n.abs()).max(floor), i))
        .fold((0.0, 0), |best, cur| if cur.0 > best.0 { cur } else { best })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err_params: f64,
    pub max_rel_err_input: f64,
    /// Location of the worst entry, e.g. `param 0.weight[3]` or `input[7]`.
    pub worst: String,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_params.max(self.max_rel_err_input)
    }
}

/// Compares analytic parameter gradients and input VJPs of `model` at `x`
/// against central differences of `<c, forward(x)>`, where `c` is a fixed
/// pseudo-random cotangent.
pub fn grad_check<M>(model: &M, x: &NdArray<f64>, h: f64, tol: f64) -> Result<GradCheckReport>
where
    M: DiffModel<f64> + ParamsMut<f64> + Clone,
{
    let (out, trace) = model.forward_trace(x)?;
    let mut rng = crate::rng_from_seed(0x5eed);
    let cot = NdArray::from_fn(out.shape(), |_| rng.gen_range(0.5..1.5));
    let analytic = model.backward(&trace, &cot, Want::ALL)?;
    let objective = |m: &M, input: &NdArray<f64>| -> f64 {
        m.forward(input)
            .map(|y| y.dot(&cot).unwrap_or(f64::NAN))
            .unwrap_or(f64::NAN)
    };

    let numeric_input = central_difference(
        |v| {
            let probe = NdArray::new(x.shape().to_vec(), v.to_vec()).expect("same shape");
            objective(model, &probe)
        },
        x.data(),
        h,
    );
    let input_grad = analytic.input.expect("input gradient requested");
    let (input_err, input_at) = max_relative_error(input_grad.data(), &numeric_input);

    let names = model.param_names();
    let mut worst_param = (0.0f64, String::new());
    let mut analytic_all = Vec::new();
    let mut numeric_all = Vec::new();
    let mut labels = Vec::new();
    for (pi, grad) in analytic.params.iter().enumerate() {
        let base = model.params()[pi].data().to_vec();
        let numeric = central_difference(
            |v| {
                let mut probe = model.clone();
                probe.params_mut()[pi].data_mut().copy_from_slice(v);
                objective(&probe, x)
            },
            &base,
            h,
        );
        analytic_all.extend_from_slice(grad.data());
        numeric_all.extend_from_slice(&numeric);
        labels.extend((0..numeric.len()).map(|i| format!("param {}[{i}]", names[pi])));
    }
    if !analytic_all.is_empty() {
        let (err, at) = max_relative_error(&analytic_all, &numeric_all);
        worst_param = (err, labels[at].clone());
    }
    let worst = if worst_param.0 >= input_err {
        worst_param.1.clone()
    } else {
        format!("input[{input_at}]")
    };
    let passed = input_err < tol && worst_param.0 < tol;
    Ok(GradCheckReport {
        max_rel_err_params: worst_param.0,
        max_rel_err_input: input_err,
        worst,
        tol,
        passed,
    })
}


/// Names of the primitive layers covered by [`primitive_suite`].
pub const PRIMITIVES: [&str; 8] = [
    "linear",
    "conv2d",
    "conv3d",
    "leaky_relu",
    "tanh",
    "avg_pool2d",
    "softmax",
    "flatten",
];

/// Random single-layer model and input for one primitive. Inputs to the
/// leaky rectifier are kept at least 0.05 away from the kink.
pub fn primitive_instance(op: &str, seed: u64) -> (crate::Sequential<f64>, NdArray<f64>) {
    use crate::Layer;
    let mut rng = crate::rng_from_seed(seed);
    let batch = rng.gen_range(1..=3);
    let randomize_bias = |layer: &mut Layer<f64>, rng: &mut crate::Rng| {
        if let Some(b) = layer.params_mut().into_iter().nth(1) {
            for v in b.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    };
    let (shape, mut layer): (Vec<usize>, Layer<f64>) = match op {
        "linear" => {
            let (i, o) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            (vec![i], Layer::linear(i, o, &mut rng))
        }
        "conv2d" => {
            let (ci, co) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
            let k = rng.gen_range(1..=3);
            let (s, p) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
            let (h, w) = (rng.gen_range(k..=6), rng.gen_range(k..=6));
            (vec![ci, h, w], Layer::conv2d(ci, co, k, s, p, &mut rng))
        }
        "conv3d" => {
            let (ci, co) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
            let k = rng.gen_range(1..=3);
            let (s, p) = (rng.gen_range(1..=2), rng.gen_range(0..=1));
            let dims: Vec<usize> = (0..3).map(|_| rng.gen_range(k.max(2)..=4)).collect();
            (
                vec![ci, dims[0], dims[1], dims[2]],
                Layer::conv3d(ci, co, k, s, p, &mut rng),
            )
        }
        "leaky_relu" => (vec![rng.gen_range(1..=4), rng.gen_range(1..=4)], Layer::leaky_relu()),
        "tanh" => (vec![rng.gen_range(1..=4), rng.gen_range(1..=4)], Layer::Tanh),
        "avg_pool2d" => {
            let size = rng.gen_range(1..=2);
            let c = rng.gen_range(1..=2);
            (
                vec![c, size * rng.gen_range(1..=3), size * rng.gen_range(1..=3)],
                Layer::AvgPool2d { size },
            )
        }
        "softmax" => (vec![rng.gen_range(2..=5), rng.gen_range(1..=3)], Layer::Softmax),
        "flatten" => (vec![rng.gen_range(1..=3), rng.gen_range(1..=3)], Layer::Flatten),
        other => panic!("unknown primitive {other}"),
    };
    randomize_bias(&mut layer, &mut rng);
    let model = crate::Sequential::new(&shape, vec![layer]).expect("valid instance");
    let mut full = vec![batch];
    full.extend_from_slice(&shape);
    let x = NdArray::from_fn(&full, |_| {
        if op == "leaky_relu" {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        } else {
            rng.gen_range(-1.0..1.0)
        }
    });
    (model, x)
}

/// Runs [`grad_check`] on `instances` random instances of every primitive
/// and returns the worst report per primitive.
pub fn primitive_suite(
    instances: usize,
    seed: u64,
    h: f64,
    tol: f64,
) -> Result<Vec<(&'static str, GradCheckReport)>> {
    let mut out = Vec::new();
    for (k, op) in PRIMITIVES.iter().enumerate() {
        let mut worst: Option<GradCheckReport> = None;
        for i in 0..instances {
            let (model, x) = primitive_instance(op, seed ^ ((k as u64) << 32) ^ i as u64);
            let report = grad_check(&model, &x, h, tol)?;
            if worst
                .as_ref()
                .map_or(true, |w| report.max_rel_err() > w.max_rel_err() || !report.passed)
            {
                worst = Some(report);
            }
        }
        out.push((*op, worst.expect("at least one instance")));
    }
    Ok(out)
}
