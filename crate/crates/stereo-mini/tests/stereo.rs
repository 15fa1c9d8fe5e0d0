use diffnet::gradcheck::{central_difference, max_relative_error};
use diffnet::loss::smooth_l1;
use diffnet::{DiffModel, NdArray};
use proptest::prelude::*;
use rand::Rng;
use stereo_mini::*;

fn flat(c: f32) -> Texture {
    Texture::Flat { color: [c, 0.5 * c, 1.0 - c] }
}

fn noise(seed: u64) -> Texture {
    Texture::Noise { base: [0.4, 0.5, 0.6], amplitude: 0.7, scale: 1, seed }
}

fn at(img: &NdArray<f32>, c: usize, y: usize, x: usize) -> f32 {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    img.data()[(c * h + y) * w + x]
}

#[test]
fn zero_parallax_scene_has_identical_views() {
    let s = Scene::new(16, 32, noise(1), 0, vec![]).unwrap().render();
    assert_eq!(s.left, s.right);
    assert!(s.disparity.data().iter().all(|&d| d == 0.0));
}

#[test]
fn single_rectangle_shifts_left_by_its_disparity() {
    let (h, w) = (16, 48);
    let rect = RectLayer { y0: 4, x0: 20, height: 6, width: 10, disparity: 8, texture: noise(9) };
    let bg = noise(2);
    let s = Scene::new(h, w, bg.clone(), 0, vec![rect]).unwrap().render();
    let plain = Scene::new(h, w, bg, 0, vec![]).unwrap().render();
    let mut expected = plain.left.clone();
    for c in 0..3 {
        for y in 4..10 {
            for x in 20..30 {
                expected.data_mut()[(c * h + y) * w + x - 8] = at(&s.left, c, y, x);
            }
        }
    }
    assert_eq!(s.right, expected);
    for y in 0..h {
        for x in 0..w {
            let inside = (4..10).contains(&y) && (20..30).contains(&x);
            assert_eq!(s.disparity.data()[y * w + x], if inside { 8.0 } else { 0.0 });
        }
    }
}

/// Conservative occlusion test. A surface hiding left pixel `x` in the right
/// view has a larger disparity and sits at a left column in `(x, x + max_d)`;
/// columns beyond the image are unknown and count as possible occluders.
fn maybe_occluded(gt: &[f32], w: usize, y: usize, x: usize, max_d: usize) -> bool {
    let d = gt[y * w + x];
    (x + 1..x + max_d).any(|x2| x2 >= w || gt[y * w + x2] > d)
}

#[test]
fn generator_is_photoconsistent_on_a_thousand_scenes() {
    let cfg = SceneConfig::default();
    let set = SceneSet::new(cfg.clone(), 1000).unwrap();
    let (mut checked, mut failed) = (0usize, 0usize);
    for s in set.iter() {
        let s = s.unwrap();
        let (h, w) = (s.height(), s.width());
        let gt = s.disparity.data();
        for y in 0..h {
            for x in 0..w {
                let d = gt[y * w + x];
                assert!(s.valid.data()[y * w + x] == 1.0);
                assert!(d >= 0.0 && (d as usize) < cfg.max_disparity && d.fract() == 0.0);
                let d = d as usize;
                if d > x || maybe_occluded(gt, w, y, x, cfg.max_disparity) {
                    continue;
                }
                checked += 1;
                if (0..3).any(|c| at(&s.left, c, y, x) != at(&s.right, c, y, x - d)) {
                    failed += 1;
                }
            }
        }
    }
    assert!(checked > 1000 * 64 * 128 / 2, "only {checked} pixels checked");
    assert_eq!(failed, 0);
}

#[test]
fn scene_sets_are_deterministic_and_distinct() {
    let set = SceneSet::new(SceneConfig { seed: 4, ..Default::default() }, 3).unwrap();
    assert_eq!(set.get(1).unwrap(), set.get(1).unwrap());
    assert_ne!(set.get(0).unwrap(), set.get(1).unwrap());
}

fn brute_force_volume(zl: &NdArray<f64>, zr: &NdArray<f64>, levels: usize) -> Vec<f64> {
    let [b, c, h, w] = [zl.shape()[0], zl.shape()[1], zl.shape()[2], zl.shape()[3]];
    let z = |a: &NdArray<f64>, n: usize, k: usize, y: usize, x: usize| a.data()[((n * c + k) * h + y) * w + x];
    let mut out = Vec::new();
    for n in 0..b {
        for k in 0..2 * c {
            for d in 0..levels {
                for y in 0..h {
                    for x in 0..w {
                        out.push(if k < c {
                            z(zl, n, k, y, x)
                        } else if x >= d {
                            z(zr, n, k - c, y, x - d)
                        } else {
                            0.0
                        });
                    }
                }
            }
        }
    }
    out
}

fn random_features(shape: &[usize], seed: u64) -> NdArray<f64> {
    let mut rng = diffnet::rng_from_seed(seed);
    NdArray::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

#[test]
fn cost_volume_zero_shift_and_padding() {
    let zl = random_features(&[1, 3, 2, 5], 1);
    let zr = random_features(&[1, 3, 2, 5], 2);
    let v = build_cost_volume(&zl, &zr, 4).unwrap();
    assert_eq!(v.shape(), &[1, 6, 4, 2, 5]);
    let idx = |k: usize, d: usize, y: usize, x: usize| (((k * 4) + d) * 2 + y) * 5 + x;
    for k in 0..3 {
        for y in 0..2 {
            for x in 0..5 {
                assert_eq!(v.data()[idx(k, 0, y, x)], zl.data()[(k * 2 + y) * 5 + x]);
                assert_eq!(v.data()[idx(k + 3, 0, y, x)], zr.data()[(k * 2 + y) * 5 + x]);
                for d in 1..4 {
                    if x < d {
                        assert_eq!(v.data()[idx(k + 3, d, y, x)], 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn cost_volume_matches_brute_force_example() {
    let zl = random_features(&[1, 4, 2, 6], 3);
    let zr = random_features(&[1, 4, 2, 6], 4);
    let v = build_cost_volume(&zl, &zr, 3).unwrap();
    assert_eq!(v.data(), brute_force_volume(&zl, &zr, 3).as_slice());
}

proptest! {
    #[test]
    fn cost_volume_matches_brute_force(c in 1usize..=8, h in 1usize..=4, w in 1usize..=8, levels in 1usize..=4, seed: u64) {
        let levels = levels.min(w);
        let zl = random_features(&[2, c, h, w], seed);
        let zr = random_features(&[2, c, h, w], seed ^ 1);
        let v = build_cost_volume(&zl, &zr, levels).unwrap();
        let expected = brute_force_volume(&zl, &zr, levels);
        prop_assert_eq!(v.data(), expected.as_slice());
    }

    #[test]
    fn soft_argmin_stays_in_range(costs in proptest::collection::vec(-50.0f64..50.0, 8 * 6)) {
        let cost = NdArray::new(vec![1, 8, 2, 3], costs).unwrap();
        let y = soft_argmin(&cost).unwrap();
        prop_assert!(y.data().iter().all(|&v| (0.0..=7.0).contains(&v)));
    }
}

#[test]
fn soft_argmin_one_hot_and_uniform() {
    let mut cost = NdArray::<f64>::zeros(&[1, 8, 1, 1]);
    cost.data_mut()[3] = -20.0;
    assert!((soft_argmin(&cost).unwrap().data()[0] - 3.0).abs() < 1e-6);
    let cost = NdArray::<f32>::full(&[2, 1, 8, 3, 4], 0.7);
    let y = soft_argmin(&cost).unwrap();
    assert_eq!(y.shape(), &[2, 3, 4]);
    assert!(y.data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
}

#[test]
fn soft_argmin_three_level_hand_value() {
    let cost = NdArray::new(vec![1, 3, 1, 1], vec![0.0f64, -1.0, 0.0]).unwrap();
    let e = 1f64.exp();
    // weights exp(-cost) = (1, e, 1)
    let hand = (0.0 * 1.0 + 1.0 * e + 2.0 * 1.0) / (1.0 + e + 1.0);
    let got = soft_argmin(&cost).unwrap().data()[0];
    assert!((got - hand).abs() < 1e-12, "{got} vs {hand}");
    assert!((hand - 1.0).abs() < 1e-15);
    let cost = NdArray::new(vec![1, 3, 1, 1], vec![0.0f64, -1.0, 1.0]).unwrap();
    let hand = (e + 2.0 / e) / (1.0 + e + 1.0 / e);
    assert!((soft_argmin(&cost).unwrap().data()[0] - hand).abs() < 1e-12);
}

#[test]
fn soft_argmin_gradient_matches_finite_differences() {
    let cost = random_features(&[2, 5, 2, 3], 7).scale(3.0);
    let g = random_features(&[2, 2, 3], 8);
    let analytic = soft_argmin_backward(&cost, &g).unwrap();
    let f = |c: &[f64]| {
        let c = NdArray::new(cost.shape().to_vec(), c.to_vec()).unwrap();
        soft_argmin(&c).unwrap().dot(&g).unwrap()
    };
    let numeric = central_difference(f, cost.data(), 1e-5);
    assert!(max_relative_error(analytic.data(), &numeric).0 < 1e-6);
}

#[test]
fn epe_and_d1_examples() {
    let gt = NdArray::from_fn(&[4, 4], |i| i as f32);
    let mask = NdArray::ones(&[4, 4]);
    assert_eq!(epe(&gt, &gt, &mask).unwrap(), 0.0);
    assert_eq!(d1_rate(&gt, &gt, &mask, 3.0).unwrap(), 0.0);
    assert_eq!(epe(&gt.map(|v| v + 1.0), &gt, &mask).unwrap(), 1.0);
    let half2 = NdArray::from_fn(&[4, 4], |i| i as f32 + if i % 2 == 0 { 2.0 } else { 0.0 });
    assert_eq!(epe(&half2, &gt, &mask).unwrap(), 1.0);
    let half5 = NdArray::from_fn(&[4, 4], |i| i as f32 + if i < 8 { 5.0 } else { 0.0 });
    assert_eq!(d1_rate(&half5, &gt, &mask, 3.0).unwrap(), 50.0);
    assert_eq!(d1_rate(&gt.map(|v| v - 3.0), &gt, &mask, 3.0).unwrap(), 0.0);
    let empty = NdArray::zeros(&[4, 4]);
    assert_eq!(epe(&half5, &gt, &empty).unwrap(), 0.0);
    assert!(epe(&gt, &NdArray::zeros(&[2, 8]), &mask).is_err());
}

fn tiny_net_config() -> StereoNetConfig {
    StereoNetConfig { height: 8, width: 16, max_disparity: 12, hidden_channels: 3, feature_channels: 2, aggregator_channels: 2 }
}

fn tiny_sample(seed: u64) -> StereoSample {
    let rect = RectLayer { y0: 2, x0: 6, height: 4, width: 6, disparity: 6, texture: noise(seed) };
    Scene::new(8, 16, noise(seed + 1), 1, vec![rect]).unwrap().render()
}

fn f64_batch(s: &StereoSample) -> (NdArray<f64>, NdArray<f64>, NdArray<f64>, NdArray<f64>) {
    let (l, r, d, v) = stack(&[s, s]).unwrap();
    (l.cast(), r.cast(), d.cast(), v.cast())
}

#[test]
fn network_gradients_match_finite_differences() {
    let net = StereoNet::<f64>::new(tiny_net_config(), 5).unwrap();
    let (l, r, d, v) = f64_batch(&tiny_sample(3));
    let (_, grads) = net.loss_and_grads(&l, &r, &d, &v).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
    let point: Vec<f64> = net.params().iter().flat_map(|p| p.data().to_vec()).collect();
    let probe = std::cell::RefCell::new(net.clone());
    let f = |theta: &[f64]| {
        let mut n = probe.borrow_mut();
        let mut k = 0;
        for p in n.params_mut() {
            let len = p.len();
            p.data_mut().copy_from_slice(&theta[k..k + len]);
            k += len;
        }
        n.loss_and_grads(&l, &r, &d, &v).unwrap().0
    };
    let numeric = central_difference(f, &point, 1e-5);
    let (err, worst) = max_relative_error(&analytic, &numeric);
    assert!(err < 1e-4, "relative error {err} at parameter {worst}");
    // the two views share one extractor: no duplicated parameters
    let names = net.param_names();
    assert_eq!(names.len(), net.extractor.params().len() + net.aggregator.params().len());
}

#[test]
fn head_feature_gradients_match_finite_differences() {
    let net = StereoNet::<f64>::new(tiny_net_config(), 6).unwrap();
    let (l, r, d, v) = f64_batch(&tiny_sample(4));
    let zl = net.extractor.forward(&l).unwrap();
    let zr = net.extractor.forward(&r).unwrap();
    let (_, gl, gr, _) = net.task(&zl, &zr, &d, &v).unwrap();
    let n = zl.len();
    let mut point = zl.data().to_vec();
    point.extend_from_slice(zr.data());
    let f = |z: &[f64]| {
        let a = NdArray::new(zl.shape().to_vec(), z[..n].to_vec()).unwrap();
        let b = NdArray::new(zr.shape().to_vec(), z[n..].to_vec()).unwrap();
        let (pred, _) = net.head_forward(&a, &b).unwrap();
        smooth_l1(&pred, &d, &v).unwrap().value
    };
    let numeric = central_difference(f, &point, 1e-5);
    let mut analytic = gl.data().to_vec();
    analytic.extend_from_slice(gr.data());
    assert!(max_relative_error(&analytic, &numeric).0 < 1e-4);
}

#[test]
fn identical_views_give_identical_features() {
    let net = StereoNet::<f32>::new(tiny_net_config(), 1).unwrap();
    let s = tiny_sample(1);
    let (l, _, _, _) = stack(&[&s]).unwrap();
    let z = net.extractor.forward(&l).unwrap();
    let v = build_cost_volume(&z, &z, 3).unwrap();
    let plane = 2 * 4;
    for k in 0..2 {
        let left = &v.data()[(k * 3) * plane..][..plane];
        let right = &v.data()[((k + 2) * 3) * plane..][..plane];
        assert_eq!(left, right);
    }
    let pred = net.predict(&l, &l).unwrap();
    assert_eq!(pred.shape(), &[1, 8, 16]);
}

#[test]
fn network_config_is_validated() {
    assert!(StereoNet::<f32>::new(StereoNetConfig { width: 30, ..tiny_net_config() }, 0).is_err());
    assert!(StereoNet::<f32>::new(StereoNetConfig { max_disparity: 4, ..tiny_net_config() }, 0).is_err());
    assert_eq!(StereoNetConfig::default().levels(), 8);
}

#[test]
fn one_sided_and_identity_shifts() {
    let s = SceneSet::new(SceneConfig::default(), 1).unwrap().get(0).unwrap();
    let g = shift_domain(&s, ShiftKind::GrayLeft, 0, None, 0.5).unwrap();
    assert_eq!(g.right, s.right);
    assert_ne!(g.left, s.left);
    let g = shift_domain(&s, ShiftKind::GrayRight, 0, None, 0.5).unwrap();
    assert_eq!(g.left, s.left);
    assert_ne!(g.right, s.right);
    let id = AcjParams::identity();
    assert_eq!(id.apply(&s.left), s.left);
    let a = shift_domain(&s, ShiftKind::Acj, 3, None, 0.5).unwrap();
    assert_ne!(a.left, s.left);
    assert_ne!(a.right, s.right);
    assert!(a.left.data().iter().chain(a.right.data()).all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(a, shift_domain(&s, ShiftKind::Acj, 3, None, 0.5).unwrap());
    for kind in [ShiftKind::Acj, ShiftKind::GrayLeft, ShiftKind::GrayRight] {
        let t = shift_domain(&s, kind, 1, None, 0.5).unwrap();
        assert_eq!((&t.disparity, &t.valid), (&s.disparity, &s.valid));
    }
}

#[test]
fn scp_shift_needs_a_model_and_moves_each_view_by_epsilon() {
    let s = SceneSet::new(SceneConfig::default(), 1).unwrap().get(0).unwrap();
    assert!(matches!(shift_domain(&s, ShiftKind::Scp, 0, None, 0.5), Err(StereoError::MissingModel)));
    let net = StereoNet::<f32>::new(StereoNetConfig::default(), 2).unwrap();
    assert_eq!(shift_domain(&s, ShiftKind::Scp, 0, Some(&net), 0.0).unwrap(), s);
    let p = shift_domain(&s, ShiftKind::Scp, 0, Some(&net), 0.5).unwrap();
    for (a, b) in [(&p.left, &s.left), (&p.right, &s.right)] {
        let dist = a.sub(b).unwrap().norm_l2();
        assert!((dist - 0.5).abs() < 1e-4, "moved by {dist}");
    }
    assert_eq!(p.disparity, s.disparity);
}

fn quick(method: StereoMethod) -> StereoRunConfig {
    StereoRunConfig { method, epochs: 2, train_size: 8, batch_size: 4, ..Default::default() }
}

#[test]
fn itsa_without_perturbation_reproduces_baseline() {
    let base = train_stereo(&quick(StereoMethod::Baseline)).unwrap();
    let mut cfg = quick(StereoMethod::Itsa);
    cfg.scp.lambda = 0.0;
    cfg.scp.epsilon = 0.0;
    let itsa = train_stereo(&cfg).unwrap();
    for (a, b) in base.net.params().iter().zip(itsa.net.params()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(base.metrics, itsa.metrics);
}

#[test]
fn training_is_seeded() {
    for method in StereoMethod::ALL {
        let a = train_stereo(&quick(method)).unwrap();
        let b = train_stereo(&quick(method)).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.net, b.net);
    }
    let a = train_stereo(&quick(StereoMethod::Itsa)).unwrap();
    assert!(a.metrics.iter().any(|m| m.name == "fi" && m.value > 0.0));
    let c = train_stereo(&StereoRunConfig { seed: 1, ..quick(StereoMethod::Itsa) }).unwrap();
    assert_ne!(a.metrics, c.metrics);
}

#[test]
fn divergence_is_reported() {
    let cfg = StereoRunConfig { learning_rate: 1e35, epochs: 3, ..quick(StereoMethod::Baseline) };
    match train_stereo(&cfg) {
        Err(StereoError::Diverged { step, .. }) => assert!(step > 0),
        other => panic!("expected divergence, got {:?}", other.map(|t| t.metrics)),
    }
}

#[test]
fn run_reports_clean_and_shifted_metrics() {
    let out = run_stereo(&quick(StereoMethod::Baseline), 2).unwrap();
    let m = out.metrics();
    for split in ["clean", "acj", "gray_left", "gray_right", "scp"] {
        assert!(m.iter().any(|r| r.split == split && r.name == "epe"));
        assert!(m.iter().any(|r| r.split == split && r.name == "d1"));
    }
    assert!(out.degradation(ShiftKind::GrayLeft).unwrap() > 0.0);
}

#[test]
fn pfm_round_trip_is_bit_exact() {
    let mut rng = diffnet::rng_from_seed(11);
    let mut bits: Vec<u32> = (0..7 * 5).map(|_| rng.gen()).collect();
    bits[0] = f32::NAN.to_bits() | 0x1234;
    bits[1] = f32::INFINITY.to_bits();
    bits[2] = (-0.0f32).to_bits();
    let map = NdArray::new(vec![7, 5], bits.iter().map(|&b| f32::from_bits(b)).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pfm");
    save_pfm(&path, &map).unwrap();
    let back = load_pfm(&path).unwrap();
    assert_eq!(back.shape(), &[7, 5]);
    let got: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
    assert_eq!(got, bits);
}
