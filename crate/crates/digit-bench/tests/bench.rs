use std::sync::OnceLock;

use diffnet::NdArray;
use digit_bench::idx::{parse_idx_images, parse_idx_labels, read_maybe_gz, serialize_idx_images, serialize_idx_labels};
use digit_bench::{
    default_mnist_dir, eval_top1, load_mnist, run_digit, synth_mnistm_set, train_digit, AccessLog, DigitError,
    DigitRunConfig, DigitSplits, LabeledImageSet, Method, Mnist, TARGET_SEED, VAL_SIZE,
};

fn mnist() -> &'static Mnist {
    static M: OnceLock<Mnist> = OnceLock::new();
    M.get_or_init(|| load_mnist(&default_mnist_dir()).unwrap())
}

fn first(set: &LabeledImageSet, n: usize) -> LabeledImageSet {
    set.select(&(0..n).collect::<Vec<_>>(), &set.split)
}

#[test]
fn idx_round_trip_on_real_test_files() {
    let dir = default_mnist_dir();
    let raw = read_maybe_gz(&dir.join("t10k-images-idx3-ubyte.gz")).unwrap();
    let imgs = parse_idx_images(&raw).unwrap();
    assert_eq!((imgs.rows, imgs.cols), (28, 28));
    let again = serialize_idx_images(&imgs);
    assert_eq!(again, raw);
    assert_eq!(parse_idx_images(&again).unwrap(), imgs);
    let raw = read_maybe_gz(&dir.join("t10k-labels-idx1-ubyte.gz")).unwrap();
    let labels = parse_idx_labels(&raw).unwrap();
    assert_eq!(labels.len(), imgs.count);
    assert_eq!(serialize_idx_labels(&labels), raw);
}

#[test]
fn loaded_sets_are_mnist_shaped() {
    let m = mnist();
    assert_eq!(m.train.images.shape()[1..], [1, 28, 28]);
    assert!(m.train.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let target = synth_mnistm_set(&first(&m.test, 4), 3, "t").unwrap();
    assert_eq!(target.images.shape(), &[4, 3, 28, 28]);
    assert_eq!(target, synth_mnistm_set(&first(&m.test, 4), 3, "t").unwrap());
}

#[test]
fn erm_one_epoch_smoke() {
    let m = mnist();
    let cfg = DigitRunConfig { epochs: 1, batch_size: 16, ..Default::default() };
    let mut log = AccessLog::default();
    let model = train_digit(&cfg, &first(&m.train, 1000), None, &mut log).unwrap();
    let acc = model.eval_top1(&m.test).unwrap();
    assert!(acc > 80.0, "source accuracy {acc}");
}

#[test]
fn itsa_without_regulariser_follows_erm_exactly() {
    let m = mnist();
    let train = first(&m.train, 600);
    let erm = DigitRunConfig { epochs: 2, seed: 5, ..Default::default() };
    let mut itsa = erm.clone();
    itsa.method = Method::Itsa;
    itsa.scp.lambda = 0.0;
    let a = train_digit(&erm, &train, None, &mut AccessLog::default()).unwrap();
    let b = train_digit(&itsa, &train, None, &mut AccessLog::default()).unwrap();
    for (p, q) in a.net.params().iter().zip(b.net.params()) {
        assert!(p.data().iter().zip(q.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn itsa_reduces_feature_distance_within_an_epoch() {
    let m = mnist();
    let cfg = DigitRunConfig { method: Method::Itsa, epochs: 1, ..Default::default() };
    let model = train_digit(&cfg, &first(&m.train, 3000), None, &mut AccessLog::default()).unwrap();
    let fi: Vec<f64> = model.metrics.iter().filter(|r| r.name == "fi").map(|r| r.value).collect();
    assert_eq!(fi.len(), 3000usize.div_ceil(64));
    let k = 8;
    let start = fi[..k].iter().sum::<f64>() / k as f64;
    let end = fi[fi.len() - k..].iter().sum::<f64>() / k as f64;
    assert!(end < start, "start {start}, end {end}");
}

#[test]
fn top1_examples() {
    let labels: Vec<usize> = (0..20).map(|i| if i < 2 { 0 } else { 1 + i % 9 }).collect();
    let images = NdArray::<f32>::zeros(&[20, 1]);
    let constant = |x: &NdArray<f32>| -> digit_bench::Result<NdArray<f32>> {
        Ok(NdArray::from_fn(&[x.batch(), 10], |k| if k % 10 == 0 { 1.0 } else { 0.0 }))
    };
    assert_eq!(eval_top1(&constant, &images, &labels).unwrap(), 10.0);

    let images = NdArray::from_fn(&[5, 1], |i| i as f32);
    let truth = [3usize, 1, 4, 1, 5];
    let lookup = |x: &NdArray<f32>| -> digit_bench::Result<NdArray<f32>> {
        let n = x.batch();
        let mut out = NdArray::zeros(&[n, 10]);
        for i in 0..n {
            out.data_mut()[i * 10 + truth[x.data()[i] as usize]] = 1.0;
        }
        Ok(out)
    };
    assert_eq!(eval_top1(&lookup, &images, &truth).unwrap(), 100.0);
}

#[test]
fn trained_accuracy_matches_independent_argmax() {
    let m = mnist();
    let cfg = DigitRunConfig { epochs: 1, ..Default::default() };
    let model = train_digit(&cfg, &first(&m.train, 2000), None, &mut AccessLog::default()).unwrap();
    let acc = model.eval_top1(&m.test).unwrap();
    // second implementation: per-sample logits and a hand-written argmax
    let x = model.prepare(&m.test).unwrap();
    let mut correct = 0;
    for i in 0..m.test.len() {
        let logits = model.net.logits(&x.select(&[i])).unwrap();
        let mut best = 0;
        for c in 1..10 {
            if logits.data()[c] > logits.data()[best] {
                best = c;
            }
        }
        correct += (best == m.test.labels[i] as usize) as usize;
    }
    let oracle = 100.0 * correct as f64 / m.test.len() as f64;
    assert!((acc - oracle).abs() <= 0.5, "{acc} vs {oracle}");
}

#[test]
fn target_data_never_reaches_training() {
    let m = mnist();
    let small = Mnist { train: first(&m.train, 1200), test: first(&m.test, 300) };
    let splits = DigitSplits::new(&small, 200, TARGET_SEED).unwrap();
    for method in Method::ALL {
        let cfg = DigitRunConfig { method, epochs: 1, ..Default::default() };
        let out = run_digit(&cfg, &splits).unwrap();
        let target = splits.target_test.content_hash();
        assert!(!out.log.hashes_in_phase("train").contains(&target.as_str()));
        assert!(out.log.hashes_in_phase("eval").contains(&target.as_str()));
        assert_eq!(out.log.hashes_in_phase("train").len(), 2);
    }
    assert!(DigitSplits::new(&small, 5000, 1).is_err());
    let _ = VAL_SIZE;
}

#[test]
fn runs_are_deterministic_per_seed() {
    let m = mnist();
    let train = first(&m.train, 400);
    let val = m.train.select(&(7000..7200).collect::<Vec<_>>(), "source_val");
    for method in Method::ALL {
        let cfg = DigitRunConfig { method, epochs: 1, seed: 9, ..Default::default() };
        let a = train_digit(&cfg, &train, Some(&val), &mut AccessLog::default()).unwrap();
        let b = train_digit(&cfg, &train, Some(&val), &mut AccessLog::default()).unwrap();
        assert_eq!(a.metrics, b.metrics, "{method}");
        let c = train_digit(&DigitRunConfig { seed: 10, ..cfg }, &train, Some(&val), &mut AccessLog::default()).unwrap();
        assert_ne!(a.metrics, c.metrics, "{method}");
    }
}

#[test]
fn divergence_reports_the_step() {
    let m = mnist();
    let cfg = DigitRunConfig { epochs: 1, learning_rate: 1e30, ..Default::default() };
    match train_digit(&cfg, &first(&m.train, 640), None, &mut AccessLog::default()) {
        Err(DigitError::Diverged { step, .. }) => assert!(step > 0),
        other => panic!("expected divergence, got {:?}", other.map(|m| m.metrics.len())),
    }
}
