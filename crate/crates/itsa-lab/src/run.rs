//! Dispatch of configured studies to the experiment crates.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use diffnet::{Layer, NdArray, Sequential};
use digit_bench::{default_mnist_dir, load_mnist, run_digit, DigitRunConfig, DigitSplits, Method, Mnist, TARGET_SEED};
use fisher_lab::{fisher_info_linear_closed, fisher_info_mc, lemma1_check, rib_penalty, GaussianEncoder, IbConfig};
use itsa_core::{Metric, ScpConfig};
use rand::Rng;
use stereo_mini::{
    run_stereo, save_pfm, shift_domain, stack, SceneConfig, ShiftKind, StereoMethod, StereoNetConfig, StereoRunConfig,
    TextureKind,
};

use crate::checkpoint::save_checkpoint;
use crate::config::{ConfigError, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::records::{write_metrics_csv, MetricsRecord};
use crate::visual::{save_disparity_png, save_rgb_png};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Study {
    Digit,
    Stereo,
    Fisher,
    Gradcheck,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Digit => "digit",
            Study::Stereo => "stereo",
            Study::Fisher => "fisher",
            Study::Gradcheck => "gradcheck",
        }
    }

    fn seed_key(self) -> String {
        format!("{}.seed", self.as_str())
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = ConfigError;

    fn from_str(s: &str) -> std::result::Result<Self, ConfigError> {
        [Study::Digit, Study::Stereo, Study::Fisher, Study::Gradcheck]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown study {s:?}")))
    }
}

/// Command-line overrides applied on top of a parsed configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub epsilon: Option<f64>,
    pub lambda: Option<f64>,
}

const CLI: usize = 0;

pub fn apply_overrides(cfg: &mut ExperimentConfig, study: Study, o: &Overrides) -> std::result::Result<(), ConfigError> {
    if let Some(seed) = o.seed {
        cfg.set(&study.seed_key(), &seed.to_string(), CLI)?;
    }
    if let Some(m) = &o.method {
        match study {
            Study::Digit | Study::Stereo => cfg.set(&format!("{study}.method"), m, CLI)?,
            _ => return Err(ConfigError::Invalid(format!("--method does not apply to the {study} study"))),
        }
    }
    if let Some(e) = o.epsilon {
        cfg.set("itsa.epsilon", &e.to_string(), CLI)?;
    }
    if let Some(l) = o.lambda {
        cfg.set("itsa.lambda", &l.to_string(), CLI)?;
    }
    Ok(())
}

fn invalid(e: impl fmt::Display) -> HarnessError {
    HarnessError::Config(ConfigError::Invalid(e.to_string()))
}

pub fn digit_config(cfg: &ExperimentConfig, seed: u64) -> Result<DigitRunConfig> {
    let method: Method = cfg.text("digit.method").parse().map_err(invalid)?;
    let base = DigitRunConfig::default();
    let c = DigitRunConfig {
        method,
        seed,
        epochs: cfg.usize("digit.epochs"),
        batch_size: cfg.usize("digit.batch_size"),
        learning_rate: cfg.float("digit.lr"),
        scp: ScpConfig { epsilon: cfg.float("itsa.epsilon"), lambda: cfg.float("itsa.lambda"), ..ScpConfig::default() },
        ib: IbConfig { beta: cfg.float("ib.beta"), beta_fisher: cfg.float("rib.beta_fisher"), ..base.ib },
        rib_sigma: cfg.float("rib.sigma"),
        train_subset: cfg.usize("digit.train_subset"),
    };
    c.validate().map_err(invalid)?;
    Ok(c)
}

pub fn stereo_config(cfg: &ExperimentConfig, seed: u64) -> Result<StereoRunConfig> {
    let method: StereoMethod = cfg.text("stereo.method").parse().map_err(invalid)?;
    let textures = cfg
        .texts("scene.textures")
        .iter()
        .map(|t| match t.as_str() {
            "flat" => TextureKind::Flat,
            "gradient" => TextureKind::Gradient,
            "checker" => TextureKind::Checker,
            _ => TextureKind::Noise,
        })
        .collect();
    let (height, width, max_disparity) = (cfg.usize("scene.height"), cfg.usize("scene.width"), cfg.usize("scene.max_disparity"));
    let c = StereoRunConfig {
        method,
        seed,
        epochs: cfg.usize("stereo.epochs"),
        batch_size: cfg.usize("stereo.batch_size"),
        learning_rate: cfg.float("stereo.lr"),
        train_size: cfg.usize("stereo.train_size"),
        scene: SceneConfig {
            height,
            width,
            max_disparity,
            min_layers: cfg.usize("scene.min_layers"),
            max_layers: cfg.usize("scene.max_layers"),
            textures,
            seed: 0,
        },
        net: StereoNetConfig { height, width, max_disparity, ..StereoNetConfig::default() },
        scp: ScpConfig { epsilon: cfg.float("itsa.epsilon"), lambda: cfg.float("itsa.lambda"), ..ScpConfig::default() },
        d1_threshold: cfg.float("eval.d1_threshold"),
        eval_epsilon: cfg.float("eval.epsilon"),
    };
    c.validate().map_err(invalid)?;
    if cfg.usize("stereo.test_size") == 0 {
        return Err(invalid("stereo.test_size must be positive"));
    }
    Ok(c)
}

fn check_generic(cfg: &ExperimentConfig, study: Study) -> Result<()> {
    if cfg.ints(&study.seed_key()).is_empty() {
        return Err(invalid("at least one seed is required"));
    }
    match study {
        Study::Fisher => {
            if !(cfg.float("fisher.sigma") > 0.0) {
                return Err(invalid("fisher.sigma must be positive"));
            }
            if cfg.usize("fisher.samples") < 2 || cfg.usize("fisher.probes") == 0 {
                return Err(invalid("fisher.samples must be at least 2 and fisher.probes positive"));
            }
            if cfg.floats("fisher.epsilons").iter().any(|&e| e <= 0.0) {
                return Err(invalid("fisher.epsilons must be positive"));
            }
        }
        Study::Gradcheck => {
            if cfg.usize("gradcheck.instances") == 0 || !(cfg.float("gradcheck.h") > 0.0) || !(cfg.float("gradcheck.tol") > 0.0) {
                return Err(invalid("gradcheck.instances, gradcheck.h and gradcheck.tol must be positive"));
            }
        }
        _ => {}
    }
    Ok(())
}

/// Worker threads for independent seeds: `ITSA_LAB_THREADS` if set and
/// positive, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("ITSA_LAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub dir: PathBuf,
    pub records: Vec<MetricsRecord>,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub study: Study,
    pub runs: Vec<SeedRun>,
}

/// Runs one study for every configured seed. Each seed writes
/// `seed-<s>/metrics.csv` (and a checkpoint and sample maps where a model is
/// trained) below `out`; the canonical configuration goes to `out/config.txt`.
pub fn run_experiment(study: Study, cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    check_generic(cfg, study)?;
    let seeds = cfg.ints(&study.seed_key()).to_vec();
    // validate everything before any work starts
    for &s in &seeds {
        match study {
            Study::Digit => drop(digit_config(cfg, s)?),
            Study::Stereo => drop(stereo_config(cfg, s)?),
            _ => {}
        }
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let snapshot = out.join("config.txt");
    std::fs::write(&snapshot, cfg.to_canonical()).map_err(|e| HarnessError::io(&snapshot, e))?;

    let mnist = if study == Study::Digit {
        let dir = match cfg.text("digit.data_dir") {
            "" => default_mnist_dir(),
            d => PathBuf::from(d),
        };
        Some(load_mnist(&dir).map_err(|e| HarnessError::run(format!("loading MNIST from {}", dir.display()), e))?)
    } else {
        None
    };

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SeedRun>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    let threads = worker_threads().min(seeds.len()).max(1);
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let r = run_seed(study, cfg, seeds[i], out, mnist.as_ref());
                results.lock().expect("results lock")[i] = Some(r);
            });
        }
    });
    let runs = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunReport { study, runs })
}

fn run_seed(study: Study, cfg: &ExperimentConfig, seed: u64, out: &Path, mnist: Option<&Mnist>) -> Result<SeedRun> {
    let dir = out.join(format!("seed-{seed}"));
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let run_id = cfg.text("run.id");
    let ctx = |what: &str| format!("{study} run {run_id:?} seed {seed}: {what}");
    let (method, metrics) = match study {
        Study::Digit => {
            let c = digit_config(cfg, seed)?;
            let mnist = mnist.expect("MNIST loaded for digit runs");
            let splits = DigitSplits::new(mnist, cfg.usize("digit.val_size"), TARGET_SEED).map_err(|e| HarnessError::run(ctx("splits"), e))?;
            let outcome = run_digit(&c, &splits).map_err(|e| HarnessError::run(ctx("training"), e))?;
            let target = splits.target_test.content_hash();
            if outcome.log.hashes_in_phase("train").contains(&target.as_str()) {
                return Err(HarnessError::Invariant(ctx("target data reached training")));
            }
            let net = &outcome.model.net;
            let entries: Vec<(String, &NdArray<f32>)> = net.param_names().into_iter().zip(net.params()).collect();
            save_checkpoint(&dir.join("final.ckpt"), &entries)?;
            (c.method.to_string(), outcome.metrics())
        }
        Study::Stereo => {
            let c = stereo_config(cfg, seed)?;
            let outcome = run_stereo(&c, cfg.usize("stereo.test_size")).map_err(|e| HarnessError::run(ctx("training"), e))?;
            let net = &outcome.model.net;
            let entries: Vec<(String, &NdArray<f32>)> = net.param_names().into_iter().zip(net.params()).collect();
            save_checkpoint(&dir.join("final.ckpt"), &entries)?;
            write_stereo_samples(&c, &outcome.model.net, &dir).map_err(|e| match e {
                HarnessError::Run { source, .. } => HarnessError::Run { context: ctx("sample maps"), source },
                other => other,
            })?;
            (c.method.to_string(), outcome.metrics())
        }
        Study::Fisher => ("fisher".to_string(), fisher_suite(cfg, seed).map_err(|e| match e {
            HarnessError::Run { context, source } => HarnessError::Run { context: ctx(&context), source },
            other => other,
        })?),
        Study::Gradcheck => ("gradcheck".to_string(), gradcheck_suite(cfg, seed)?),
    };
    let records: Vec<MetricsRecord> = metrics.iter().map(|m| MetricsRecord::from_metric(run_id, &method, seed, m)).collect();
    write_metrics_csv(&dir.join("metrics.csv"), &records)?;
    Ok(SeedRun { seed, dir, records })
}

/// PFM and PNG disparity maps for the first clean test scene and its
/// gray-left shift, plus the ground truth and the left view.
fn write_stereo_samples(c: &StereoRunConfig, net: &stereo_mini::StereoNet<f32>, dir: &Path) -> Result<()> {
    let wrap = |e: stereo_mini::StereoError| HarnessError::run("sample maps", e);
    let sample = c.test_set(1).map_err(wrap)?.get(0).map_err(wrap)?;
    let (h, w) = (sample.height(), sample.width());
    let dmax = c.scene.max_disparity as f32;
    let samples = dir.join("samples");
    std::fs::create_dir_all(&samples).map_err(|e| HarnessError::io(&samples, e))?;
    save_pfm(&samples.join("gt.pfm"), &sample.disparity).map_err(wrap)?;
    save_disparity_png(&samples.join("gt.png"), &sample.disparity, dmax)?;
    save_rgb_png(&samples.join("left.png"), &sample.left)?;
    for (name, shift) in [("clean", None), ("gray_left", Some(ShiftKind::GrayLeft))] {
        let s = match shift {
            Some(k) => shift_domain(&sample, k, 0, Some(net), c.eval_epsilon).map_err(wrap)?,
            None => sample.clone(),
        };
        let (l, r, _, _) = stack(&[&s]).map_err(wrap)?;
        let pred = net.predict(&l, &r).map_err(|e| wrap(e.into()))?.reshape(&[h, w]).map_err(|e| wrap(e.into()))?;
        save_pfm(&samples.join(format!("pred_{name}.pfm")), &pred).map_err(wrap)?;
        save_disparity_png(&samples.join(format!("pred_{name}.png")), &pred, dmax)?;
    }
    Ok(())
}

fn linear_encoder(weight: Vec<f64>, rows: usize, cols: usize, sigma: f64) -> Result<GaussianEncoder<Sequential<f64>>> {
    let mu = Sequential::new(
        &[cols],
        vec![Layer::Linear { weight: NdArray::new(vec![rows, cols], weight).map_err(|e| HarnessError::run("encoder", e))?, bias: NdArray::zeros(&[rows]) }],
    )
    .map_err(|e| HarnessError::run("encoder", e))?;
    GaussianEncoder::new(mu, sigma).map_err(|e| HarnessError::run("encoder", e))
}

/// Estimator agreement on a linear-Gaussian encoder and the epsilon sweep of
/// the first-order Fisher approximation along the score direction.
fn fisher_suite(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Metric>> {
    let sigma = cfg.float("fisher.sigma");
    let n = cfg.usize("fisher.samples");
    let mut rng = diffnet::rng_from_seed(seed);
    let (rows, cols) = (3, 4);
    let a: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let x = NdArray::from_fn(&[1, cols], |_| rng.gen_range(-1.0..1.0));
    let enc = linear_encoder(a.clone(), rows, cols, sigma)?;
    let fe = |what: &'static str| move |e: fisher_lab::FisherError| HarnessError::run(what, e);
    let closed = fisher_info_linear_closed(&NdArray::new(vec![rows, cols], a).map_err(|e| HarnessError::run("encoder", e))?, sigma).map_err(fe("closed form"))?;
    let mc = fisher_info_mc(&enc, &x, n, seed).map_err(fe("monte carlo"))?;
    let hutch = rib_penalty(&enc, &x, cfg.usize("fisher.probes"), seed ^ 1).map_err(fe("hutchinson"))?.value;
    let mut out = vec![
        Metric::new(0, "linear", "phi_closed", closed),
        Metric::new(0, "linear", "phi_mc", mc.mean),
        Metric::new(0, "linear", "phi_mc_stderr", mc.std_err),
        Metric::new(0, "linear", "phi_hutchinson", hutch),
        Metric::new(0, "linear", "rel_err_mc", (mc.mean - closed).abs() / closed),
        Metric::new(0, "linear", "rel_err_hutchinson", (hutch - closed).abs() / closed),
    ];

    let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let enc1 = linear_encoder(w.clone(), 1, 3, sigma)?;
    let x1 = NdArray::from_fn(&[1, 3], |_| rng.gen_range(-1.0..1.0));
    let u = NdArray::new(vec![1, 3], w.iter().map(|v| v / norm).collect()).map_err(|e| HarnessError::run("direction", e))?;
    let eps = cfg.floats("fisher.epsilons");
    let mut residuals = Vec::new();
    for (k, &e) in eps.iter().enumerate() {
        let r = lemma1_check(&enc1, &x1, &u, e, n, seed ^ (k as u64 + 2)).map_err(fe("first-order check"))?;
        let ill = || HarnessError::Invariant(format!("score direction reported ill-conditioned at epsilon {e}"));
        let residual = r.relative_residual.ok_or_else(ill)?;
        let rhs = r.rhs.ok_or_else(ill)?;
        residuals.push(residual);
        for (name, v) in [
            ("epsilon", e),
            ("psi", r.psi),
            ("lhs", r.lhs),
            ("lhs_mc", r.lhs_mc),
            ("rhs", rhs),
            ("tv", r.tv),
            ("variance_term", r.variance_term),
            ("relative_residual", residual),
        ] {
            out.push(Metric::new(k, "lemma1", name, v));
        }
    }
    let decreasing_eps = eps.windows(2).all(|p| p[1] < p[0]);
    if decreasing_eps && !residuals.windows(2).all(|p| p[1] < p[0]) {
        return Err(HarnessError::Invariant(format!("residuals {residuals:?} do not shrink with epsilon {eps:?}")));
    }
    Ok(out)
}

fn gradcheck_suite(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Metric>> {
    let suite = diffnet::gradcheck::primitive_suite(cfg.usize("gradcheck.instances"), seed, cfg.float("gradcheck.h"), cfg.float("gradcheck.tol"))
        .map_err(|e| HarnessError::run("gradient suite", e))?;
    let failed: Vec<&str> = suite.iter().filter(|(_, r)| !r.passed).map(|(op, _)| *op).collect();
    if !failed.is_empty() {
        return Err(HarnessError::Invariant(format!("gradient check failed for {}", failed.join(", "))));
    }
    Ok(suite.iter().map(|(op, r)| Metric::new(0, "gradcheck", *op, r.max_rel_err())).collect())
}
