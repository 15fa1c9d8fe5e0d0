use std::fmt;
use std::str::FromStr;

use diffnet::{adam_step, AdamConfig, AdamState, NdArray};
use itsa_core::{itsa_step, Metric, ScpConfig, TaskEval};
use rand::seq::SliceRandom;

use crate::error::{Result, StereoError};
use crate::metrics::{d1_rate, epe, D1_THRESHOLD};
use crate::net::{StereoNet, StereoNetConfig};
use crate::sample::{stack, StereoSample};
use crate::scene::{derive_seed, SceneConfig, SceneSet};
use crate::shift::{shift_domain, ShiftKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StereoMethod {
    Baseline,
    ScpOnly,
    Itsa,
}

impl StereoMethod {
    pub const ALL: [StereoMethod; 3] = [StereoMethod::Baseline, StereoMethod::ScpOnly, StereoMethod::Itsa];

    pub fn as_str(self) -> &'static str {
        match self {
            StereoMethod::Baseline => "baseline",
            StereoMethod::ScpOnly => "scp_only",
            StereoMethod::Itsa => "itsa",
        }
    }
}

impl fmt::Display for StereoMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StereoMethod {
    type Err = StereoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(StereoMethod::Baseline),
            "scp_only" | "scp-only" => Ok(StereoMethod::ScpOnly),
            "itsa" => Ok(StereoMethod::Itsa),
            _ => Err(StereoError::InvalidConfig(format!("unknown stereo method {s:?}"))),
        }
    }
}

// stream ids for derive_seed
const STREAM_INIT: u64 = 1;
const STREAM_SCENES: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;

/// Seed of the shared clean test scenes.
pub const TEST_SEED: u64 = 0x5e5e;

#[derive(Clone, Debug, PartialEq)]
pub struct StereoRunConfig {
    pub method: StereoMethod,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_size: usize,
    /// Scene geometry; the seed field is ignored, training scenes are drawn
    /// from the run seed.
    pub scene: SceneConfig,
    pub net: StereoNetConfig,
    /// `epsilon` and `lambda` for itsa, `epsilon` for scp_only.
    pub scp: ScpConfig,
    pub d1_threshold: f64,
    /// Step size of the scp evaluation shift.
    pub eval_epsilon: f64,
}

impl Default for StereoRunConfig {
    fn default() -> Self {
        Self {
            method: StereoMethod::Baseline,
            seed: 0,
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-3,
            train_size: 2000,
            scene: SceneConfig::default(),
            net: StereoNetConfig::default(),
            scp: ScpConfig::default(),
            d1_threshold: D1_THRESHOLD,
            eval_epsilon: 0.5,
        }
    }
}

impl StereoRunConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.net.validate()?;
        self.scp.validate()?;
        if (self.scene.height, self.scene.width, self.scene.max_disparity) != (self.net.height, self.net.width, self.net.max_disparity) {
            return Err(StereoError::InvalidConfig(format!(
                "scene geometry {}x{} / D={} differs from network {}x{} / D={}",
                self.scene.height, self.scene.width, self.scene.max_disparity, self.net.height, self.net.width, self.net.max_disparity
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.train_size == 0 {
            return Err(StereoError::InvalidConfig("epochs, batch_size and train_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(StereoError::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.eval_epsilon >= 0.0 && self.eval_epsilon.is_finite()) {
            return Err(StereoError::InvalidConfig(format!("evaluation epsilon {} must be non-negative", self.eval_epsilon)));
        }
        if !(self.d1_threshold > 0.0) {
            return Err(StereoError::InvalidConfig(format!("d1 threshold {} must be positive", self.d1_threshold)));
        }
        Ok(())
    }

    /// Objective settings actually used by the method: none for baseline,
    /// perturbed inputs mixed into the task without the feature term for
    /// scp_only, and the configured objective for itsa.
    pub fn objective(&self) -> Option<ScpConfig> {
        match self.method {
            StereoMethod::Baseline => None,
            StereoMethod::ScpOnly => Some(ScpConfig { lambda: 0.0, perturbed_task: true, ..self.scp.clone() }),
            StereoMethod::Itsa => Some(self.scp.clone()),
        }
    }

    pub fn train_set(&self) -> Result<SceneSet> {
        SceneSet::new(SceneConfig { seed: derive_seed(self.seed, STREAM_SCENES), ..self.scene.clone() }, self.train_size)
    }

    /// Clean evaluation scenes shared by every run with the same geometry.
    pub fn test_set(&self, len: usize) -> Result<SceneSet> {
        SceneSet::new(SceneConfig { seed: TEST_SEED, ..self.scene.clone() }, len)
    }
}

#[derive(Clone, Debug)]
pub struct TrainedStereo {
    pub net: StereoNet<f32>,
    pub metrics: Vec<Metric>,
}

struct StepOut {
    loss: f64,
    fisher: Option<f64>,
    grads: Vec<NdArray<f32>>,
}

fn objective_step(net: &StereoNet<f32>, batch: &(NdArray<f32>, NdArray<f32>, NdArray<f32>, NdArray<f32>), scp: &ScpConfig) -> Result<StepOut> {
    let (left, right, gt, mask) = batch;
    let s = itsa_step(&net.extractor, &[left, right], scp, None, |z: &[NdArray<f32>]| {
        let (loss, gl, gr, agg) = net.task(&z[0], &z[1], gt, mask).map_err(|e| match e {
            StereoError::Diff(d) => itsa_core::ItsaError::Diff(d),
            other => itsa_core::ItsaError::InvalidConfig(other.to_string()),
        })?;
        Ok(TaskEval { loss, feature_grads: vec![gl, gr], head_grads: agg })
    })?;
    let mut grads = s.extractor_grads;
    grads.extend(s.head_grads);
    let fisher = (scp.lambda > 0.0).then(|| 0.5 * (s.fisher[0] + s.fisher[1]));
    Ok(StepOut { loss: s.total_loss, fisher, grads })
}

/// Trains on clean synthetic scenes. Emits per-epoch `loss` (and `fi` for
/// itsa) on split `train`.
pub fn train_stereo(cfg: &StereoRunConfig) -> Result<TrainedStereo> {
    cfg.validate()?;
    let mut net = StereoNet::<f32>::new(cfg.net.clone(), derive_seed(cfg.seed, STREAM_INIT))?;
    let data = cfg.train_set()?;
    let objective = cfg.objective();
    let names = net.param_names();
    let mut adam = AdamState::new(AdamConfig { learning_rate: cfg.learning_rate, ..Default::default() });
    let mut shuffle = diffnet::rng_from_seed(derive_seed(cfg.seed, STREAM_SHUFFLE));
    let mut order: Vec<usize> = (0..data.len).collect();
    let mut metrics = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut fi_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let samples = chunk.iter().map(|&i| data.get(i)).collect::<Result<Vec<_>>>()?;
            let batch = stack(&samples.iter().collect::<Vec<_>>())?;
            let out = match &objective {
                None => {
                    let (loss, grads) = net.loss_and_grads(&batch.0, &batch.1, &batch.2, &batch.3)?;
                    StepOut { loss, fisher: None, grads }
                }
                Some(scp) => objective_step(&net, &batch, scp)?,
            };
            if !out.loss.is_finite() {
                return Err(StereoError::Diverged { step, what: "loss".into() });
            }
            if out.grads.iter().any(|g| !g.all_finite()) {
                return Err(StereoError::Diverged { step, what: "gradient".into() });
            }
            adam_step(&mut net.params_mut(), &out.grads, &names, &mut adam)?;
            loss_sum += out.loss;
            fi_sum += out.fisher.unwrap_or(0.0);
            batches += 1;
            step += 1;
        }
        metrics.push(Metric::new(epoch, "train", "loss", loss_sum / batches as f64));
        if cfg.method == StereoMethod::Itsa && cfg.scp.lambda > 0.0 {
            metrics.push(Metric::new(epoch, "train", "fi", fi_sum / batches as f64));
        }
    }
    Ok(TrainedStereo { net, metrics })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub epe: f64,
    pub d1: f64,
}

/// Mean per-sample EPE and D1 over `samples`, optionally after a shift.
/// Shift randomness for sample `i` is seeded by `derive_seed(seed, i)`.
pub fn evaluate(
    net: &StereoNet<f32>,
    samples: &[StereoSample],
    shift: Option<ShiftKind>,
    seed: u64,
    epsilon: f64,
    d1_threshold: f64,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(StereoError::InvalidConfig("evaluation needs at least one sample".into()));
    }
    let (mut e, mut d) = (0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let shifted;
        let s = match shift {
            Some(kind) => {
                shifted = shift_domain(s, kind, derive_seed(seed, i as u64), Some(net), epsilon)?;
                &shifted
            }
            None => s,
        };
        let (l, r, gt, mask) = stack(&[s])?;
        let pred = net.predict(&l, &r)?;
        let pred = pred.reshape(gt.sample_shape())?;
        let (gt, mask) = (gt.reshape(&[s.height(), s.width()])?, mask.reshape(&[s.height(), s.width()])?);
        e += epe(&pred, &gt, &mask)?;
        d += d1_rate(&pred, &gt, &mask, d1_threshold)?;
    }
    let n = samples.len() as f64;
    Ok(EvalResult { epe: e / n, d1: d / n })
}

/// Clean and shifted evaluation of a trained run.
#[derive(Clone, Debug)]
pub struct StereoOutcome {
    pub model: TrainedStereo,
    pub clean: EvalResult,
    pub shifted: Vec<(ShiftKind, EvalResult)>,
}

impl StereoOutcome {
    pub fn shifted(&self, kind: ShiftKind) -> Option<EvalResult> {
        self.shifted.iter().find(|(k, _)| *k == kind).map(|(_, r)| *r)
    }

    /// `EPE(shifted) / EPE(clean)`.
    pub fn degradation(&self, kind: ShiftKind) -> Option<f64> {
        self.shifted(kind).map(|r| r.epe / self.clean.epe)
    }

    /// Mean D1 over all shifted sets.
    pub fn shifted_d1(&self) -> f64 {
        self.shifted.iter().map(|(_, r)| r.d1).sum::<f64>() / self.shifted.len().max(1) as f64
    }

    /// Training metrics followed by `epe`/`d1` rows per evaluation split
    /// (`clean` or the shift name), all at the final epoch.
    pub fn metrics(&self) -> Vec<Metric> {
        let mut m = self.model.metrics.clone();
        let epoch = m.last().map_or(0, |r| r.epoch);
        let mut push = |split: &str, r: &EvalResult| {
            m.push(Metric::new(epoch, split, "epe", r.epe));
            m.push(Metric::new(epoch, split, "d1", r.d1));
        };
        push("clean", &self.clean);
        for (k, r) in &self.shifted {
            push(k.as_str(), r);
        }
        m
    }
}

/// Trains, then evaluates on `test_size` clean test scenes and on every shift.
/// The scp shift uses `eval_epsilon`.
pub fn run_stereo(cfg: &StereoRunConfig, test_size: usize) -> Result<StereoOutcome> {
    let model = train_stereo(cfg)?;
    let test: Vec<StereoSample> = cfg.test_set(test_size)?.iter().collect::<Result<_>>()?;
    let eps = cfg.eval_epsilon;
    let clean = evaluate(&model.net, &test, None, TEST_SEED, eps, cfg.d1_threshold)?;
    let mut shifted = Vec::new();
    for kind in ShiftKind::ALL {
        shifted.push((kind, evaluate(&model.net, &test, Some(kind), TEST_SEED, eps, cfg.d1_threshold)?));
    }
    Ok(StereoOutcome { model, clean, shifted })
}
