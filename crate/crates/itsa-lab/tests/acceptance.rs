//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line to stderr (outside the harness capture) before asserting.
//!
//! The long studies (digit and stereo) run through the same entry point as
//! the command-line tool. Tests hold a global lock so runtimes are measured
//! one study at a time.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use diffnet::loss::cross_entropy;
use diffnet::{jacobian, DiffModel, Layer, NdArray, Sequential, Want};
use fisher_lab::{fisher_info_linear_closed, fisher_info_mc, lemma1_check, rib_penalty, GaussianEncoder};
use itsa_core::{fisher_loss, itsa_step, perturb, scp_direction, Reduction, ScpConfig, TaskEval};
use itsa_lab::{parse_config, run_experiment, ExperimentConfig, MetricsRecord, Study};
use rand::Rng;
use stereo_mini::{soft_argmin, StereoMethod, StereoRunConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

/// User plus system CPU time of this process, summed over its threads. Falls
/// back to wall time where `/proc` is unavailable.
struct CpuClock {
    wall: Instant,
    cpu: Option<Duration>,
}

fn process_cpu() -> Option<Duration> {
    let stat = std::fs::read_to_string("/proc/self/stat").ok()?;
    // fields after the parenthesised command name; utime and stime are 14 and 15
    let rest = &stat[stat.rfind(')')? + 2..];
    let f: Vec<&str> = rest.split_whitespace().collect();
    let ticks: u64 = f.get(11)?.parse::<u64>().ok()? + f.get(12)?.parse::<u64>().ok()?;
    // USER_HZ is 100 on every Linux ABI
    Some(Duration::from_millis(ticks * 10))
}

impl CpuClock {
    fn start() -> Self {
        Self { wall: Instant::now(), cpu: process_cpu() }
    }

    fn elapsed(&self) -> Duration {
        match (self.cpu, process_cpu()) {
            (Some(a), Some(b)) => b.saturating_sub(a),
            _ => self.wall.elapsed(),
        }
    }
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_suite() {
    let _g = serial();
    let t = Instant::now();
    let suite = diffnet::gradcheck::primitive_suite(20, 0, 1e-5, 1e-4).unwrap();
    let elapsed = t.elapsed();
    let failed: Vec<&str> = suite.iter().filter(|(_, r)| !r.passed).map(|(op, _)| *op).collect();
    let worst = suite.iter().map(|(_, r)| r.max_rel_err()).fold(0.0, f64::max);
    let pass = failed.is_empty() && suite.len() >= 8 && elapsed < Duration::from_secs(60);
    report(1, pass, &format!("{} ops x 20 instances, worst rel err {worst:.2e}, failed {failed:?}, {:.1}s", suite.len(), elapsed.as_secs_f64()));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 2

fn small_extractor(seed: u64) -> Sequential<f64> {
    let mut rng = diffnet::rng_from_seed(seed);
    Sequential::new(
        &[2, 6, 6],
        vec![Layer::conv2d(2, 3, 3, 1, 1, &mut rng), Layer::leaky_relu(), Layer::conv2d(3, 4, 3, 2, 1, &mut rng), Layer::Tanh],
    )
    .unwrap()
}

fn random_input(shape: &[usize], seed: u64) -> NdArray<f64> {
    let mut rng = diffnet::rng_from_seed(seed);
    NdArray::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn bits(v: &[NdArray<f64>]) -> Vec<u64> {
    v.iter().flat_map(|a| a.data().iter().map(|x| x.to_bits())).collect()
}

#[test]
fn criterion_2_scp_and_feature_distance_invariants() {
    let _g = serial();
    let t = Instant::now();
    let mut notes = Vec::new();

    // perturbation norm
    let mut worst_norm = 0.0f64;
    for seed in 0..10 {
        let m = small_extractor(seed);
        let x = random_input(&[8, 2, 6, 6], 100 + seed);
        for eps in [0.5, 0.01, 2.0] {
            let pair = perturb(&m, &x, &ScpConfig { epsilon: eps, ..Default::default() }).unwrap();
            for n in pair.x_star.sub(&pair.x).unwrap().sample_norms() {
                worst_norm = worst_norm.max((n - eps).abs());
            }
        }
    }
    let norm_ok = worst_norm <= 1e-6;
    notes.push(format!("max | ||x*-x|| - eps | = {worst_norm:.1e}"));

    // L_FI non-negativity, symmetry, homogeneity
    let mut rng = diffnet::rng_from_seed(7);
    let mut lfi_ok = true;
    for case in 0..200 {
        let shape = [1 + case % 4, 3 + case % 5];
        let z = NdArray::<f64>::from_fn(&shape, |_| rng.gen_range(-3.0..3.0));
        let zs = NdArray::<f64>::from_fn(&shape, |_| rng.gen_range(-3.0..3.0));
        let c: f64 = rng.gen_range(-4.0..4.0);
        let a = fisher_loss(&z, &zs, Reduction::Mean).unwrap();
        let b = fisher_loss(&zs, &z, Reduction::Mean).unwrap();
        let scaled = fisher_loss(&z.scale(c), &zs.scale(c), Reduction::Mean).unwrap();
        let zero = fisher_loss(&z, &z, Reduction::Mean).unwrap();
        lfi_ok &= a >= 0.0 && (a - b).abs() <= 1e-12 * a.max(1.0) && (scaled - c.abs() * a).abs() <= 1e-10 * a.max(1.0) && zero == 0.0;
    }
    notes.push(format!("L_FI properties on 200 cases: {lfi_ok}"));

    // eps = 0 reproduces the task-only step bit for bit
    let mut rng = diffnet::rng_from_seed(11);
    let head = Sequential::new(&[4, 3, 3], vec![Layer::Flatten, Layer::linear(36, 3, &mut rng)]).unwrap();
    let labels = [0usize, 2, 1, 1];
    let task = |z: &[NdArray<f64>]| {
        let mut loss = 0.0;
        let mut feature_grads = Vec::new();
        let mut head_grads: Vec<NdArray<f64>> = Vec::new();
        for zv in z {
            let (logits, tr) = head.forward_trace(zv)?;
            let ce = cross_entropy(&logits, &labels)?;
            loss += ce.value;
            let b = head.backward(&tr, &ce.grad, Want::ALL)?;
            feature_grads.push(b.input.expect("input gradient"));
            if head_grads.is_empty() {
                head_grads = b.params;
            } else {
                for (h, g) in head_grads.iter_mut().zip(&b.params) {
                    h.add_assign(g)?;
                }
            }
        }
        Ok(TaskEval { loss, feature_grads, head_grads })
    };
    let m = small_extractor(12);
    let xl = random_input(&[4, 2, 6, 6], 13);
    let xr = random_input(&[4, 2, 6, 6], 14);
    let base = itsa_step(&m, &[&xl, &xr], &ScpConfig { lambda: 0.0, ..Default::default() }, None, task).unwrap();
    let zero = itsa_step(&m, &[&xl, &xr], &ScpConfig { epsilon: 0.0, ..Default::default() }, None, task).unwrap();
    let eps0_ok = bits(&base.extractor_grads) == bits(&zero.extractor_grads)
        && bits(&base.head_grads) == bits(&zero.head_grads)
        && base.total_loss.to_bits() == zero.total_loss.to_bits();

    // and a whole stereo training run
    let quick = StereoRunConfig { epochs: 2, train_size: 8, batch_size: 4, ..Default::default() };
    let baseline = stereo_mini::train_stereo(&quick).unwrap();
    let itsa0 = stereo_mini::train_stereo(&StereoRunConfig {
        method: StereoMethod::Itsa,
        scp: ScpConfig { epsilon: 0.0, ..Default::default() },
        ..quick.clone()
    })
    .unwrap();
    let net_bits = |n: &stereo_mini::StereoNet<f32>| n.params().iter().flat_map(|p| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    let train_eps0_ok = net_bits(&baseline.net) == net_bits(&itsa0.net);
    notes.push(format!("eps=0 step identical: {eps0_ok}, eps=0 stereo training identical: {train_eps0_ok}"));

    // frozen directions
    let fresh = itsa_step(&m, &[&xl, &xr], &ScpConfig::default(), None, task).unwrap();
    let u: Vec<NdArray<f64>> = fresh.directions.iter().map(|d| d.u.clone()).collect();
    let frozen = itsa_step(&m, &[&xl, &xr], &ScpConfig::default(), Some(&u), task).unwrap();
    let frozen_ok = bits(&fresh.extractor_grads) == bits(&frozen.extractor_grads) && bits(&fresh.head_grads) == bits(&frozen.head_grads);
    notes.push(format!("frozen u identical: {frozen_ok}"));

    let elapsed = t.elapsed();
    let pass = norm_ok && lfi_ok && eps0_ok && train_eps0_ok && frozen_ok && elapsed < Duration::from_secs(60);
    report(2, pass, &format!("{}; {:.1}s", notes.join("; "), elapsed.as_secs_f64()));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 3

fn linear_encoder(a: &NdArray<f64>, sigma: f64) -> GaussianEncoder<Sequential<f64>> {
    let (rows, cols) = (a.shape()[0], a.shape()[1]);
    let mu = Sequential::new(&[cols], vec![Layer::Linear { weight: a.clone(), bias: NdArray::zeros(&[rows]) }]).unwrap();
    GaussianEncoder::new(mu, sigma).unwrap()
}

#[test]
fn criterion_3_fisher_estimators_agree() {
    let _g = serial();
    let t = Instant::now();
    let mut rng = diffnet::rng_from_seed(21);
    let mut worst = 0.0f64;
    for (k, (rows, cols, sigma)) in [(3, 4, 0.6), (2, 5, 0.3), (4, 3, 1.2)].into_iter().enumerate() {
        let a = NdArray::from_fn(&[rows, cols], |_| rng.gen_range(-1.5..1.5));
        let x = NdArray::from_fn(&[1, cols], |_| rng.gen_range(-1.0..1.0));
        let enc = linear_encoder(&a, sigma);
        let closed = fisher_info_linear_closed(&a, sigma).unwrap();
        let mc = fisher_info_mc(&enc, &x, 100_000, 30 + k as u64).unwrap().mean;
        let hutch = rib_penalty(&enc, &x, 10_000, 40 + k as u64).unwrap().value;
        worst = worst.max((mc - closed).abs() / closed).max((hutch - closed).abs() / closed).max((mc - hutch).abs() / closed);
    }

    // first-order sweep along the score direction (psi = 0)
    let w = NdArray::new(vec![1, 3], vec![0.8, -1.1, 0.4]).unwrap();
    let enc = linear_encoder(&w, 0.6);
    let norm = w.norm_l2();
    let u = NdArray::new(vec![1, 3], w.data().iter().map(|v| v / norm).collect()).unwrap();
    let x = NdArray::new(vec![1, 3], vec![0.2, -0.5, 0.9]).unwrap();
    let mut residuals = Vec::new();
    let mut psi = 0.0f64;
    for (k, eps) in [0.1, 0.03, 0.01].into_iter().enumerate() {
        let r = lemma1_check(&enc, &x, &u, eps, 100_000, 50 + k as u64).unwrap();
        psi = psi.max(r.psi.abs());
        residuals.push(r.relative_residual.unwrap_or(f64::NAN));
    }
    let decreasing = residuals.windows(2).all(|p| p[1] < p[0]);
    let elapsed = t.elapsed();
    let pass = worst < 0.05 && decreasing && psi < 1e-6 && elapsed < Duration::from_secs(300);
    report(3, pass, &format!("worst pairwise rel diff {:.2}%, residuals {}, {:.1}s", 100.0 * worst, residuals.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(" > "), elapsed.as_secs_f64()));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_first_order_consistency() {
    let _g = serial();
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = diffnet::rng_from_seed(60 + seed);
        let m = Sequential::new(&[2, 5, 5], vec![Layer::conv2d(2, 3, 3, 1, 1, &mut rng), Layer::Tanh, Layer::conv2d(3, 2, 3, 2, 1, &mut rng), Layer::Tanh]).unwrap();
        let x = random_input(&[3, 2, 5, 5], 70 + seed);
        let cfg = ScpConfig { epsilon: 1e-3, ..Default::default() };
        let dir = scp_direction(&m, &x, &cfg).unwrap();
        let pair = perturb(&m, &x, &cfg).unwrap();
        for i in 0..x.batch() {
            let xi = x.select(&[i]);
            let j = jacobian(&m, &xi).unwrap();
            let n_in = xi.len();
            let ui = dir.u.sample(i);
            let ju = (0..j.shape()[0])
                .map(|r| j.data()[r * n_in..(r + 1) * n_in].iter().zip(ui).map(|(a, b)| a * b).sum::<f64>().powi(2))
                .sum::<f64>()
                .sqrt();
            let lfi = fisher_loss(&pair.z.select(&[i]), &pair.z_star.select(&[i]), Reduction::Sum).unwrap();
            worst = worst.max((lfi / 1e-3 - ju).abs() / ju);
        }
    }
    let elapsed = t.elapsed();
    let pass = worst < 0.01 && elapsed < Duration::from_secs(60);
    report(4, pass, &format!("max rel err of L_FI/eps vs ||J u|| = {:.3}%, {:.1}s", 100.0 * worst, elapsed.as_secs_f64()));
    assert!(pass);
}

// ---------------------------------------------------------------- criterion 5

fn final_values(records: &[MetricsRecord], split: &str, metric: &str) -> Vec<f64> {
    let mut last: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == split && r.metric == metric) {
        let slot = last.entry(r.seed).or_insert((r.epoch, r.value));
        if r.epoch >= slot.0 {
            *slot = (r.epoch, r.value);
        }
    }
    last.into_values().map(|(_, v)| v).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn study(study: Study, method_key: &str, method: &str, seeds: &str) -> Vec<MetricsRecord> {
    let mut cfg = ExperimentConfig::default();
    cfg.set(method_key, method, 0).unwrap();
    cfg.set(&format!("{}.seed", study.as_str()), seeds, 0).unwrap();
    let out = tempfile::tempdir().unwrap();
    let report = run_experiment(study, &cfg, out.path()).unwrap();
    report.runs.into_iter().flat_map(|r| r.records).collect()
}

#[test]
fn criterion_5_digit_trend() {
    let _g = serial();
    let t = CpuClock::start();
    let mut source = BTreeMap::new();
    let mut target = BTreeMap::new();
    for method in ["erm", "ib", "rib", "itsa"] {
        let recs = study(Study::Digit, "digit.method", method, "0, 1, 2");
        source.insert(method, final_values(&recs, "source_test", "top1"));
        target.insert(method, final_values(&recs, "target_test", "top1"));
    }
    let elapsed = t.elapsed();
    let source_ok = source.values().flatten().all(|&a| a >= 95.0);
    let (erm, ib, itsa) = (mean(&target["erm"]), mean(&target["ib"]), mean(&target["itsa"]));
    let pass = source_ok && itsa >= erm + 5.0 && ib < erm && minutes(elapsed) < 30.0;
    let summary: Vec<String> = target.iter().map(|(m, v)| format!("{m} {:.1}", mean(v))).collect();
    report(
        5,
        pass,
        &format!(
            "min source top1 {:.1}; target means {}; itsa - erm = {:+.1}; {:.1} CPU min",
            source.values().flatten().fold(f64::INFINITY, |a, &b| a.min(b)),
            summary.join(", "),
            itsa - erm,
            minutes(elapsed)
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------- criteria 6 and 7

struct StereoStudy {
    records: BTreeMap<&'static str, Vec<MetricsRecord>>,
    elapsed: Duration,
}

fn stereo_study() -> &'static StereoStudy {
    static STUDY: OnceLock<StereoStudy> = OnceLock::new();
    STUDY.get_or_init(|| {
        let t = CpuClock::start();
        let records = ["baseline", "scp_only", "itsa"].into_iter().map(|m| (m, study(Study::Stereo, "stereo.method", m, "0, 1, 2"))).collect();
        StereoStudy { records, elapsed: t.elapsed() }
    })
}

fn degradation(recs: &[MetricsRecord], split: &str) -> f64 {
    let shifted = final_values(recs, split, "epe");
    let clean = final_values(recs, "clean", "epe");
    mean(&shifted.iter().zip(&clean).map(|(s, c)| s / c).collect::<Vec<_>>())
}

fn shifted_d1(recs: &[MetricsRecord]) -> f64 {
    let per_shift: Vec<f64> = ["acj", "gray_left", "gray_right", "scp"].iter().map(|s| mean(&final_values(recs, s, "d1"))).collect();
    mean(&per_shift)
}

#[test]
fn criterion_6_stereo_shortcut_trend() {
    let _g = serial();
    let s = stereo_study();
    let (base, itsa) = (&s.records["baseline"], &s.records["itsa"]);
    let mut parts = Vec::new();
    let mut pass = minutes(s.elapsed) < 90.0;
    for split in ["gray_left", "acj"] {
        let (b, i) = (degradation(base, split), degradation(itsa, split));
        pass &= b > i;
        parts.push(format!("{split}: baseline {b:.3} vs itsa {i:.3}"));
    }
    report(6, pass, &format!("mean EPE degradation over 3 seeds; {}; 9 runs {:.1} CPU min", parts.join("; "), minutes(s.elapsed)));
    assert!(pass);
}

#[test]
fn criterion_7_ablation_ordering() {
    let _g = serial();
    let s = stereo_study();
    let (b, sc, i) = (shifted_d1(&s.records["baseline"]), shifted_d1(&s.records["scp_only"]), shifted_d1(&s.records["itsa"]));
    let pass = i <= sc && sc <= b;
    report(7, pass, &format!("mean shifted D1 over 3 seeds and 4 shifts: itsa {i:.2} <= scp_only {sc:.2} <= baseline {b:.2}"));
    assert!(pass);
}

/// Reference bounds for the stereo pipeline on the same nine runs: the
/// baseline fits the source domain and the regularised model stays close.
#[test]
fn stereo_reference_bounds() {
    let _g = serial();
    let s = stereo_study();
    let base = final_values(&s.records["baseline"], "clean", "epe");
    let itsa = final_values(&s.records["itsa"], "clean", "epe");
    let msg = format!("clean EPE baseline {base:.3?}, itsa {itsa:.3?}");
    let _ = std::io::stderr().write_all(format!("stereo reference: {msg}\n").as_bytes());
    assert!(base.iter().all(|&e| e < 1.5), "{msg}");
    assert!(base.iter().zip(&itsa).all(|(b, i)| *i <= 2.0 * b), "{msg}");
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_determinism_and_formats() {
    let _g = serial();
    let mut notes = Vec::new();

    let cfg = parse_config(
        "stereo.seed = 3\nstereo.epochs = 1\nstereo.train_size = 4\nstereo.batch_size = 2\nstereo.test_size = 2\nstereo.method = itsa\n\
         scene.height = 16\nscene.width = 32\nscene.max_disparity = 8\nfisher.samples = 20000\nfisher.probes = 500\n",
    )
    .unwrap();
    let mut same = true;
    for st in [Study::Stereo, Study::Fisher] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_experiment(st, &cfg, a.path()).unwrap();
        run_experiment(st, &cfg, b.path()).unwrap();
        let rel = ra.runs[0].dir.strip_prefix(a.path()).unwrap().join("metrics.csv");
        same &= std::fs::read(a.path().join(&rel)).unwrap() == std::fs::read(b.path().join(&rel)).unwrap();
    }
    notes.push(format!("metrics.csv reproduced: {same}"));

    let dir = digit_bench::default_mnist_dir();
    let mut idx_ok = true;
    for f in ["t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz"] {
        let raw = digit_bench::idx::read_maybe_gz(&dir.join(f)).unwrap();
        let parsed = digit_bench::idx::parse_idx(&raw).unwrap();
        idx_ok &= digit_bench::idx::serialize_idx(&parsed) == raw;
    }
    notes.push(format!("IDX round trip: {idx_ok}"));

    let mut rng = diffnet::rng_from_seed(80);
    let mut vals: Vec<f32> = (0..5 * 7).map(|_| rng.gen_range(-50.0..50.0)).collect();
    vals[0] = f32::INFINITY;
    vals[1] = -0.0;
    vals[2] = f32::from_bits(0x7fc0_1234);
    let map = NdArray::new(vec![5, 7], vals).unwrap();
    let mut buf = Vec::new();
    stereo_mini::write_pfm(&mut buf, &map).unwrap();
    let back = stereo_mini::read_pfm(&mut buf.as_slice()).unwrap();
    let pfm_ok = back.shape() == map.shape() && back.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    notes.push(format!("PFM round trip: {pfm_ok}"));

    let levels = 6;
    let mut sa_ok = true;
    let mut worst = 0.0f64;
    for hot in 0..levels {
        let cost = NdArray::<f64>::from_fn(&[1, levels, 1, 1], |d| if d == hot { -1e4 } else { 0.0 });
        let y = soft_argmin(&cost).unwrap().data()[0];
        worst = worst.max((y - hot as f64).abs());
    }
    let uniform = soft_argmin(&NdArray::<f64>::full(&[1, levels, 1, 1], 3.7)).unwrap().data()[0];
    worst = worst.max((uniform - (levels - 1) as f64 / 2.0).abs());
    sa_ok &= worst <= 1e-6;
    notes.push(format!("soft-argmin one-hot/uniform max err {worst:.1e}"));

    let pass = same && idx_ok && pfm_ok && sa_ok;
    report(8, pass, &notes.join("; "));
    assert!(pass);
}
