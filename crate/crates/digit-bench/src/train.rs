use diffnet::loss::{argmax_rows, cross_entropy};
use diffnet::{adam_step, AdamConfig, AdamState, Chain, DiffModel, NdArray, Want};
use fisher_lab::{rib_penalty, vib_kl, GaussianEncoder, IbConfig};
use itsa_core::{itsa_step, Metric, ScpConfig, TaskEval};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dataset::{AccessLog, ChannelStats, LabeledImageSet};
use crate::error::{DigitError, Result};
use crate::mnistm::derive_seed;
use crate::net::{join_columns, split_columns, Bottleneck, DigitNet, Method, LATENT};

/// Stream tags for the per-run random generators.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_PROBES: u64 = 3;
const EVAL_BATCH: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct DigitRunConfig {
    pub method: Method,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub scp: ScpConfig,
    pub ib: IbConfig,
    /// Fixed latent noise of the RIB encoder.
    pub rib_sigma: f64,
    /// Number of training images used; 0 means all.
    pub train_subset: usize,
}

impl Default for DigitRunConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            seed: 0,
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            scp: ScpConfig::default(),
            ib: IbConfig { beta_fisher: 1e-4, ..IbConfig::default() },
            rib_sigma: 0.1,
            train_subset: 0,
        }
    }
}

impl DigitRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(DigitError::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.rib_sigma > 0.0) {
            return Err(DigitError::InvalidConfig("learning_rate and rib_sigma must be > 0".into()));
        }
        self.scp.validate()?;
        self.ib.validate()?;
        Ok(())
    }

    fn bottleneck(&self) -> Bottleneck {
        match self.method {
            Method::Ib => Bottleneck::Variational,
            Method::Rib => Bottleneck::FixedSigma(self.rib_sigma),
            Method::Erm | Method::Itsa => Bottleneck::Deterministic,
        }
    }
}

/// A trained network with the input normalisation it was trained under.
#[derive(Clone, Debug)]
pub struct TrainedDigit {
    pub net: DigitNet,
    pub stats: ChannelStats,
    pub metrics: Vec<Metric>,
}

impl TrainedDigit {
    /// Standardised three-channel copy of a set's images.
    pub fn prepare(&self, set: &LabeledImageSet) -> Result<NdArray<f32>> {
        Ok(self.stats.apply(&set.replicate_channels(3)?.images))
    }

    pub fn predict(&self, set: &LabeledImageSet) -> Result<Vec<usize>> {
        let x = self.prepare(set)?;
        let mut out = Vec::with_capacity(set.len());
        for start in (0..set.len()).step_by(EVAL_BATCH) {
            let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(set.len())).collect();
            out.extend(argmax_rows(&self.net.logits(&x.select(&idx))?));
        }
        Ok(out)
    }

    pub fn eval_top1(&self, set: &LabeledImageSet) -> Result<f64> {
        let x = self.prepare(set)?;
        eval_top1(&|b: &NdArray<f32>| self.net.logits(b), &x, &set.labels_usize())
    }
}

/// Top-1 accuracy in percent of `model` on standardised images.
pub fn eval_top1(
    model: &impl Fn(&NdArray<f32>) -> Result<NdArray<f32>>,
    images: &NdArray<f32>,
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for start in (0..labels.len()).step_by(EVAL_BATCH) {
        let idx: Vec<usize> = (start..(start + EVAL_BATCH).min(labels.len())).collect();
        let pred = argmax_rows(&model(&images.select(&idx))?);
        correct += pred.iter().zip(&labels[start..]).filter(|(p, l)| p == l).count();
    }
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

struct StepOut {
    loss: f64,
    regulariser: Option<(&'static str, f64)>,
    grads: Vec<NdArray<f32>>,
}

/// Trains on source images only. `val` (also source) is evaluated after each
/// epoch. Every set the run touches is recorded in `log` under phase `train`.
pub fn train_digit(
    cfg: &DigitRunConfig,
    train: &LabeledImageSet,
    val: Option<&LabeledImageSet>,
    log: &mut AccessLog,
) -> Result<TrainedDigit> {
    cfg.validate()?;
    log.record("train", train);
    if let Some(v) = val {
        log.record("train", v);
    }
    let train = if cfg.train_subset > 0 && cfg.train_subset < train.len() {
        train.select(&(0..cfg.train_subset).collect::<Vec<_>>(), &train.split)
    } else {
        train.clone()
    };
    let train3 = train.replicate_channels(3)?;
    let stats = ChannelStats::from_set(&train3);
    let x_all = stats.apply(&train3.images);
    let labels = train.labels_usize();

    let mut model = TrainedDigit {
        net: DigitNet::new(cfg.bottleneck(), cfg.seed)?,
        stats,
        metrics: Vec::new(),
    };
    let names = model.net.param_names();
    let mut adam = AdamState::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = diffnet::rng_from_seed(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut noise_rng = diffnet::rng_from_seed(derive_seed(cfg.seed, STREAM_NOISE));
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_all.select(chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let out = match cfg.method {
                Method::Erm => erm_step(&model.net, &xb, &yb)?,
                Method::Itsa => itsa_digit_step(&model.net, &xb, &yb, &cfg.scp)?,
                Method::Ib => ib_step(&model.net, &xb, &yb, &cfg.ib, &mut noise_rng)?,
                Method::Rib => rib_step(
                    &model.net,
                    &xb,
                    &yb,
                    cfg,
                    &mut noise_rng,
                    derive_seed(derive_seed(cfg.seed, STREAM_PROBES), step as u64),
                )?,
            };
            if !out.loss.is_finite() {
                return Err(DigitError::Diverged { step, what: "loss".into() });
            }
            if let Some((name, v)) = out.regulariser {
                model.metrics.push(Metric::new(epoch, "train", name, v));
            }
            adam_step(&mut model.net.params_mut(), &out.grads, &names, &mut adam).map_err(|e| match e {
                diffnet::DiffError::NonFiniteGradient { name } => DigitError::Diverged { step, what: format!("gradient of {name}") },
                e => e.into(),
            })?;
            loss_sum += out.loss;
            batches += 1;
            step += 1;
        }
        model.metrics.push(Metric::new(epoch, "train", "loss", loss_sum / batches.max(1) as f64));
        if let Some(v) = val {
            let acc = model.eval_top1(v)?;
            model.metrics.push(Metric::new(epoch, "source_val", "top1", acc));
        }
    }
    Ok(model)
}

fn erm_step(net: &DigitNet, x: &NdArray<f32>, y: &[usize]) -> Result<StepOut> {
    let (z, tr) = net.extractor.forward_trace(x)?;
    let task = head_task(net, y)(std::slice::from_ref(&z))?;
    let mut grads = net.extractor.backward(&tr, &task.feature_grads[0], Want::PARAMS)?.params;
    grads.extend(task.head_grads);
    Ok(StepOut { loss: task.loss, regulariser: None, grads })
}

/// Cross-entropy through neck and classifier of a deterministic net.
fn head_task<'a>(net: &'a DigitNet, y: &'a [usize]) -> impl FnMut(&[NdArray<f32>]) -> itsa_core::Result<TaskEval<f32>> + 'a {
    move |z: &[NdArray<f32>]| {
        let (h, ntr) = net.neck.forward_trace(&z[0])?;
        let (logits, ctr) = net.classifier.forward_trace(&h)?;
        let ce = cross_entropy(&logits, y)?;
        let cb = net.classifier.backward(&ctr, &ce.grad, Want::ALL)?;
        let nb = net.neck.backward(&ntr, cb.input.as_ref().expect("input gradient"), Want::ALL)?;
        let mut head_grads = nb.params;
        head_grads.extend(cb.params);
        Ok(TaskEval {
            loss: ce.value as f64,
            feature_grads: vec![nb.input.expect("input gradient")],
            head_grads,
        })
    }
}

fn itsa_digit_step(net: &DigitNet, x: &NdArray<f32>, y: &[usize], scp: &ScpConfig) -> Result<StepOut> {
    let s = itsa_step(&net.extractor, &[x], scp, None, head_task(net, y))?;
    let mut grads = s.extractor_grads;
    grads.extend(s.head_grads);
    let regulariser = (scp.lambda > 0.0).then_some(("fi", s.fisher[0]));
    Ok(StepOut { loss: s.total_loss, regulariser, grads })
}

fn ib_step(net: &DigitNet, x: &NdArray<f32>, y: &[usize], ib: &IbConfig, rng: &mut impl Rng) -> Result<StepOut> {
    let (feat, etr) = net.extractor.forward_trace(x)?;
    let (h, ntr) = net.neck.forward_trace(&feat)?;
    let (mu, rho) = split_columns(&h, LATENT);
    let sigma = rho.map(softplus);
    let eta = NdArray::<f32>::from_fn(mu.shape(), |_| rng.sample(StandardNormal));
    let mut z = mu.clone();
    for ((zv, &s), &e) in z.data_mut().iter_mut().zip(sigma.data()).zip(eta.data()) {
        *zv += s * e;
    }
    let (logits, ctr) = net.classifier.forward_trace(&z)?;
    let ce = cross_entropy(&logits, y)?;
    let cb = net.classifier.backward(&ctr, &ce.grad, Want::ALL)?;
    let dz = cb.input.expect("input gradient");
    let kl = vib_kl(&mu.cast::<f64>(), &sigma.cast::<f64>())?;
    let beta = ib.beta as f32;
    let mut dmu = dz.clone();
    dmu.axpy(beta, &kl.grad_mu.cast())?;
    let mut drho = NdArray::zeros(rho.shape());
    let gs = kl.grad_sigma.cast::<f32>();
    for (k, d) in drho.data_mut().iter_mut().enumerate() {
        let dsigma = dz.data()[k] * eta.data()[k] + beta * gs.data()[k];
        *d = dsigma * sigmoid(rho.data()[k]);
    }
    let nb = net.neck.backward(&ntr, &join_columns(&dmu, &drho), Want::ALL)?;
    let mut grads = net.extractor.backward(&etr, nb.input.as_ref().expect("input gradient"), Want::PARAMS)?.params;
    grads.extend(nb.params);
    grads.extend(cb.params);
    Ok(StepOut {
        loss: ce.value as f64 + ib.beta * kl.value,
        regulariser: Some(("kl", kl.value)),
        grads,
    })
}

fn rib_step(
    net: &DigitNet,
    x: &NdArray<f32>,
    y: &[usize],
    cfg: &DigitRunConfig,
    rng: &mut impl Rng,
    probe_seed: u64,
) -> Result<StepOut> {
    let sigma = cfg.rib_sigma as f32;
    let (feat, etr) = net.extractor.forward_trace(x)?;
    let (mu, ntr) = net.neck.forward_trace(&feat)?;
    let mut z = mu.clone();
    for v in z.data_mut() {
        *v += sigma * rng.sample::<f32, _>(StandardNormal);
    }
    let (logits, ctr) = net.classifier.forward_trace(&z)?;
    let ce = cross_entropy(&logits, y)?;
    let cb = net.classifier.backward(&ctr, &ce.grad, Want::ALL)?;
    let nb = net.neck.backward(&ntr, cb.input.as_ref().expect("input gradient"), Want::ALL)?;
    let mut grads = net.extractor.backward(&etr, nb.input.as_ref().expect("input gradient"), Want::PARAMS)?.params;
    grads.extend(nb.params);
    let enc = GaussianEncoder::new(Chain::new(&net.extractor, &net.neck), cfg.rib_sigma)?;
    let pen = rib_penalty(&enc, x, cfg.ib.n_probes, probe_seed)?;
    let bf = cfg.ib.beta_fisher as f32;
    for (g, p) in grads.iter_mut().zip(&pen.param_grads) {
        g.axpy(bf, p)?;
    }
    grads.extend(cb.params);
    Ok(StepOut {
        loss: ce.value as f64 + cfg.ib.beta_fisher * pen.value,
        regulariser: Some(("fisher_penalty", pen.value)),
        grads,
    })
}

fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}
