//! Contracts of the consistency-training step: loss algebra, stop-gradient, Dual-Network
//! cross-teaching, determinism and resumption.

use multiaug_core::augment::AugPipeline;
use multiaug_core::data::{render_synthetic_sample, SynthConfig};
use multiaug_core::geometry::{warp_heatmap, Heatmap, Image, Joint, KeypointSet};
use multiaug_core::model::{adam_step, LrSchedule, OptimizerState, PoseEstimator, TinyPoseNet};
use multiaug_core::ssltrain::*;
use multiaug_core::RandomStream;

fn random_image(h: usize, w: usize, rng: &mut RandomStream) -> Image {
    Image::from_pixels(h, w, (0..h * w * 3).map(|_| rng.next_f64()).collect()).unwrap()
}

fn random_joints(k: usize, h: usize, w: usize, rng: &mut RandomStream) -> KeypointSet {
    KeypointSet::new(
        (0..k)
            .map(|_| Joint::visible(rng.uniform(2.0, w as f64 - 3.0), rng.uniform(2.0, h as f64 - 3.0)))
            .collect(),
    )
}

fn random_heatmaps(n: usize, k: usize, rng: &mut RandomStream) -> Vec<Heatmap> {
    (0..n)
        .map(|_| Heatmap::from_values(k, 4, 3, 4, (0..k * 12).map(|_| rng.uniform(-0.2, 1.0)).collect()).unwrap())
        .collect()
}

fn options(paths: &[&str], input_height: usize, shared_outer: bool) -> ViewOptions {
    ViewOptions {
        paths: paths
            .iter()
            .map(|p| AugPipeline::preset(p).unwrap().scaled_to_input(input_height))
            .collect(),
        fisheye: false,
        joint_threshold: 0.3,
        shared_outer,
    }
}

struct Fixture {
    net: TinyPoseNet,
    sup: SupervisedBatch,
    unlabeled: Vec<Image>,
}

fn fixture(seed: u64, batch: usize, size: usize) -> Fixture {
    let mut rng = RandomStream::new(seed);
    let labeled: Vec<(Image, KeypointSet)> = (0..batch)
        .map(|_| (random_image(size, size, &mut rng), random_joints(3, size, size, &mut rng)))
        .collect();
    let refs: Vec<(&Image, &KeypointSet)> = labeled.iter().map(|(i, k)| (i, k)).collect();
    let sup = prepare_supervised(&refs, 4, 1.0, &rng.split_named("sup")).unwrap();
    let unlabeled = (0..batch).map(|_| random_image(size, size, &mut rng)).collect();
    Fixture {
        net: TinyPoseNet::init(3, seed),
        sup,
        unlabeled,
    }
}

// ---- loss algebra -------------------------------------------------------------------------

#[test]
fn multi_loss_is_the_sum_of_per_path_losses() {
    let mut rng = RandomStream::new(11);
    for n in 1..=4 {
        let teachers: Vec<Vec<Teacher>> = (0..n)
            .map(|_| random_heatmaps(3, 2, &mut rng).into_iter().map(Teacher::detach).collect())
            .collect();
        let students: Vec<Vec<Heatmap>> = (0..n).map(|_| random_heatmaps(3, 2, &mut rng)).collect();
        let signals: Vec<PathSignals> = (0..n)
            .map(|i| PathSignals {
                teachers: &teachers[i],
                students: &students[i],
            })
            .collect();
        let ml = multipath_unsup_loss(&signals, UnsupMode::MultiLoss).unwrap();
        let parts: Vec<LossGrad> = (0..n)
            .map(|i| consistency_loss(&teachers[i], &students[i]).unwrap())
            .collect();
        let sum: f64 = parts.iter().map(|p| p.loss).sum();
        assert!((ml.total - sum).abs() < 1e-12);
        assert!((ml.per_path.iter().sum::<f64>() - ml.total).abs() < 1e-12);
        for (g, p) in ml.grads.iter().zip(&parts) {
            assert_eq!(g, &p.grads);
        }
        if n == 1 {
            assert_eq!(ml.total, parts[0].loss);
            let t: Vec<Heatmap> = teachers[0].iter().map(|t| t.heatmap().clone()).collect();
            assert_eq!(ml.total, supervised_loss(&students[0], &t).unwrap().loss);
        }
    }
}

#[test]
fn fusion_with_identical_students_is_multi_loss_over_n() {
    let mut rng = RandomStream::new(12);
    let teacher: Vec<Teacher> = random_heatmaps(2, 3, &mut rng).into_iter().map(Teacher::detach).collect();
    let student = random_heatmaps(2, 3, &mut rng);
    for n in 1..=5 {
        let signals = vec![
            PathSignals {
                teachers: &teacher,
                students: &student,
            };
            n
        ];
        let hf = multipath_unsup_loss(&signals, UnsupMode::HeatmapFusion).unwrap();
        let ml = multipath_unsup_loss(&signals, UnsupMode::MultiLoss).unwrap();
        assert!((hf.total - ml.total / n as f64).abs() < 1e-12, "n={n}");
    }
}

#[test]
fn confidence_mask_zeroes_sub_threshold_channels_exactly() {
    let mut rng = RandomStream::new(13);
    let k = 4;
    let mut teachers = random_heatmaps(3, k, &mut rng);
    // Channel 1 everywhere below tau; channel 3 below tau in sample 0 only.
    for (b, t) in teachers.iter_mut().enumerate() {
        let plane = t.height() * t.width();
        for c in [1, 3] {
            if c == 1 || b == 0 {
                t.values_mut()[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = 0.49);
            }
        }
        // Every other channel peaks above tau.
        for c in [0, 2] {
            t.values_mut()[c * plane] = 0.9;
        }
        if b != 0 {
            t.values_mut()[3 * plane] = 0.9;
        }
    }
    let teachers: Vec<Teacher> = teachers.into_iter().map(Teacher::detach).collect();
    let students = random_heatmaps(3, k, &mut rng);
    let sig = [PathSignals {
        teachers: &teachers,
        students: &students,
    }];
    let cm = multipath_unsup_loss(&sig, UnsupMode::confidence_mask(0.5).unwrap()).unwrap();
    let plane = 12;
    let mut sse = 0.0;
    let mut included = 0;
    for b in 0..3 {
        for c in 0..k {
            let g = &cm.grads[0][b].values()[c * plane..(c + 1) * plane];
            let keep = c != 1 && !(c == 3 && b == 0);
            if !keep {
                assert!(g.iter().all(|v| *v == 0.0), "sample {b} channel {c} leaked gradient");
                continue;
            }
            included += 1;
            for (s, t) in students[b].channel(c).iter().zip(teachers[b].heatmap().channel(c)) {
                sse += (s - t).powi(2);
            }
        }
    }
    assert!((cm.total - sse / (included * plane) as f64).abs() < 1e-12);
}

// ---- view construction ----------------------------------------------------------------------

#[test]
fn m12_builds_four_views_from_one_teacher_forward() {
    let f = fixture(1, 3, 32);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let opts = options(&["JOCO", "JC", "JCCM", "JO"], 32, false);
    let c = build_consistency_batch(&unl, &f.net, &opts, &RandomStream::new(2)).unwrap();
    assert_eq!(c.teacher_forwards, 1);
    assert_eq!(c.paths.len(), 4);
    assert!(c.paths.iter().all(|p| p.views.len() == 3 && p.teachers.len() == 3));
    // Each path's teacher is the single easy prediction warped by that view's outer affine.
    let easy: Vec<&Image> = c.easy.images.iter().collect();
    let (pred, _) = f.net.predict(&easy).unwrap();
    for p in &c.paths {
        for j in 0..3 {
            let warped = warp_heatmap(&pred[j], &p.views[j].relative_affine).unwrap();
            assert_eq!(p.teachers[j].heatmap(), &warped);
        }
    }
}

#[test]
fn unconfident_teachers_trigger_logged_fallbacks() {
    let f = fixture(2, 4, 32);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let mut opts = options(&["JOCO", "JC", "JCCM", "JO"], 32, false);
    opts.joint_threshold = f64::INFINITY;
    let c = build_consistency_batch(&unl, &f.net, &opts, &RandomStream::new(3)).unwrap();
    assert!(c.easy_joints.iter().all(|k| k.usable_points().is_empty()));
    // One joint-aware op per path, per sample.
    assert_eq!(c.fallbacks(), 4 * 4);
    for p in &c.paths {
        assert_eq!(p.fallbacks(), 4);
    }
}

#[test]
fn fusion_paths_share_the_outer_affine() {
    let f = fixture(3, 2, 32);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let c = build_consistency_batch(&unl, &f.net, &options(&["JOCO", "JCCM"], 32, true), &RandomStream::new(4))
        .unwrap();
    for j in 0..2 {
        assert_eq!(c.paths[0].views[j].relative_affine, c.paths[1].views[j].relative_affine);
        assert_eq!(c.paths[0].teachers[j], c.paths[1].teachers[j]);
    }
}

// ---- stop-gradient ----------------------------------------------------------------------------

const STEP: f64 = 1e-5;

/// Compares the analytic step gradient with central differences of the step loss with
/// every teacher held at its recorded value; parameters whose perturbation crosses a ReLU
/// kink (non-vanishing third difference) are skipped. Returns (worst rel. error, checked, kinked).
fn frozen_teacher_check(
    fusion: bool,
    mode_for: fn(&ConsistencyBatch) -> UnsupMode,
    every: usize,
    seed: u64,
) -> (f64, usize, usize) {
    let f = fixture(seed, 2, 16);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let opts = options(&["JOCO", "JCCM"], 16, fusion);
    let cons = build_consistency_batch(&unl, &f.net, &opts, &RandomStream::new(seed + 100)).unwrap();
    let mode = mode_for(&cons);
    let (losses, analytic) = step_gradients(&f.net, &f.sup, Some(&cons), 1.0, mode).unwrap();
    assert!(losses.unsup > 0.0);
    let mut worst: f64 = 0.0;
    let (mut checked, mut kinked) = (0, 0);
    let mut flat = 0;
    for (ti, tensor) in f.net.params().tensors.iter().enumerate() {
        for i in 0..tensor.data.len() {
            flat += 1;
            if flat % every != 0 {
                continue;
            }
            let eval = |delta: f64| {
                let mut n = f.net.clone();
                n.params_mut().tensors[ti].data[i] += delta;
                step_loss(&n, &f.sup, Some(&cons), 1.0, mode).unwrap().total
            };
            let (fm, f0, fp, fpp) = (eval(-STEP), eval(0.0), eval(STEP), eval(2.0 * STEP));
            if (fpp - 3.0 * fp + 3.0 * f0 - fm).abs() > 1e-11 * (1.0 + f0.abs()) {
                kinked += 1;
                continue;
            }
            let fd = (fp - fm) / (2.0 * STEP);
            let a = analytic.tensors[ti].data[i];
            // Differences of a loss near 0.1 at this step carry ~1e-12 rounding error.
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(err);
            checked += 1;
        }
    }
    (worst, checked, kinked)
}

#[test]
fn step_gradient_matches_frozen_teacher_differences() {
    // An untrained teacher peaks far below the default threshold; the median peak masks
    // about half of the channels.
    fn median_mask(c: &ConsistencyBatch) -> UnsupMode {
        let mut peaks: Vec<f64> = c
            .paths
            .iter()
            .flat_map(|p| &p.teachers)
            .flat_map(|t| {
                let h = t.heatmap();
                (0..h.channels()).map(move |k| h.channel(k).iter().copied().fold(f64::MIN, f64::max))
            })
            .collect();
        peaks.sort_by(f64::total_cmp);
        UnsupMode::confidence_mask(peaks[peaks.len() / 2]).unwrap()
    }
    let cases: [(bool, fn(&ConsistencyBatch) -> UnsupMode, usize); 3] = [
        (false, |_| UnsupMode::MultiLoss, 1),
        (false, median_mask, 5),
        (true, |_| UnsupMode::HeatmapFusion, 5),
    ];
    for (fusion, mode_for, every) in cases {
        let (worst, checked, kinked) = frozen_teacher_check(fusion, mode_for, every, 7);
        let mode = if fusion { "fusion" } else { "multi-loss or mask" };
        assert!(kinked * 20 < checked, "{mode:?}: {kinked} kinked of {}", checked + kinked);
        assert!(worst < 1e-3, "{mode:?}: worst relative error {worst:e}");
    }
}

#[test]
fn zero_lambda_is_bit_identical_to_a_supervised_step() {
    let f = fixture(4, 3, 16);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let cfg = |lambda| StepConfig {
        views: options(&["JOCO", "JCCM"], 16, false),
        lambda,
        mode: UnsupMode::MultiLoss,
        epoch: 0,
    };
    let mut a = f.net.clone();
    let mut oa = OptimizerState::new(a.params(), LrSchedule::default());
    let (la, cons) = train_step_single(&mut a, &mut oa, &f.sup, &unl, &cfg(0.0), &RandomStream::new(1)).unwrap();
    assert!(cons.is_none() && la.per_path.is_empty());

    let mut b = f.net.clone();
    let mut ob = OptimizerState::new(b.params(), LrSchedule::default());
    let refs: Vec<&Image> = f.sup.images.iter().collect();
    let (pred, _, cache) = b.forward(&refs).unwrap();
    let s = supervised_loss(&pred, &f.sup.targets).unwrap();
    let g = b.backward(&cache, &s.grads).unwrap();
    adam_step(&mut ob, b.params_mut(), &g, 0).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(la.supervised, s.loss);
}

#[test]
fn unequal_batch_counts_are_rejected() {
    let f = fixture(5, 3, 16);
    let unl: Vec<&Image> = f.unlabeled.iter().take(2).collect();
    let cfg = StepConfig {
        views: options(&["JC"], 16, false),
        lambda: 1.0,
        mode: UnsupMode::MultiLoss,
        epoch: 0,
    };
    let mut net = f.net.clone();
    let mut opt = OptimizerState::new(net.params(), LrSchedule::default());
    let err = train_step_single(&mut net, &mut opt, &f.sup, &unl, &cfg, &RandomStream::new(0)).unwrap_err();
    assert!(matches!(err, multiaug_core::Error::Contract(_)), "{err}");
}

#[test]
fn per_path_losses_sum_to_the_unsupervised_loss() {
    let f = fixture(6, 2, 16);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let opts = options(&["JOCO", "JC", "JCCM", "JO"], 16, false);
    let cons = build_consistency_batch(&unl, &f.net, &opts, &RandomStream::new(9)).unwrap();
    let (l, _) = step_gradients(&f.net, &f.sup, Some(&cons), 0.7, UnsupMode::MultiLoss).unwrap();
    assert_eq!(l.per_path.len(), 4);
    assert!((l.per_path.iter().sum::<f64>() - l.unsup).abs() < 1e-12);
    assert!((l.total - (l.supervised + 0.7 * l.unsup)).abs() < 1e-12);
}

// ---- Dual-Network ----------------------------------------------------------------------------

fn dual_losses(a: &TinyPoseNet, b: &TinyPoseNet, f: &Fixture) -> (StepLosses, StepLosses) {
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let opts = options(&["JOCO", "JCCM"], 16, false);
    let (ca, cb) = dual_consistency_batches(a, b, &unl, &opts, &RandomStream::new(21)).unwrap();
    let la = step_loss(a, &f.sup, Some(&ca), 1.0, UnsupMode::MultiLoss).unwrap();
    let lb = step_loss(b, &f.sup, Some(&cb), 1.0, UnsupMode::MultiLoss).unwrap();
    (la, lb)
}

#[test]
fn identical_networks_give_identical_unsupervised_losses() {
    let f = fixture(8, 3, 16);
    let (la, lb) = dual_losses(&f.net, &f.net.clone(), &f);
    assert!((la.unsup - lb.unsup).abs() < 1e-12);
    assert!(la.unsup > 0.0);
}

#[test]
fn swapping_the_networks_swaps_the_losses() {
    let f = fixture(9, 3, 16);
    let other = TinyPoseNet::init(3, 99);
    let (la, lb) = dual_losses(&f.net, &other, &f);
    let (sa, sb) = dual_losses(&other, &f.net, &f);
    assert_eq!(la, sb);
    assert_eq!(lb, sa);
    assert_ne!(la.unsup, lb.unsup);
}

#[test]
fn a_unsupervised_loss_does_not_depend_on_b_parameters_once_teachers_are_fixed() {
    let f = fixture(10, 2, 16);
    let net_b = TinyPoseNet::init(3, 77);
    let unl: Vec<&Image> = f.unlabeled.iter().collect();
    let opts = options(&["JOCO", "JCCM"], 16, false);
    let (ca, cb) = dual_consistency_batches(&f.net, &net_b, &unl, &opts, &RandomStream::new(5)).unwrap();

    // Perturb every B parameter: with A's (detached) teachers recorded, L_u,A is unchanged.
    let base = step_loss(&f.net, &f.sup, Some(&ca), 1.0, UnsupMode::MultiLoss).unwrap();
    let mut rng = RandomStream::new(1);
    let mut perturbed_b = net_b.clone();
    for t in &mut perturbed_b.params_mut().tensors {
        t.data.iter_mut().for_each(|v| *v += 1e-3 * rng.normal());
    }
    let _ = perturbed_b.predict(&unl).unwrap();
    let again = step_loss(&f.net, &f.sup, Some(&ca), 1.0, UnsupMode::MultiLoss).unwrap();
    assert_eq!(base, again);

    // The dual step updates B with exactly its own L_s + L_u,B gradient: no L_u,A term.
    let cfg = StepConfig {
        views: opts.clone(),
        lambda: 1.0,
        mode: UnsupMode::MultiLoss,
        epoch: 0,
    };
    let (mut a1, mut b1) = (f.net.clone(), net_b.clone());
    let mut oa = OptimizerState::new(a1.params(), LrSchedule::default());
    let mut ob = OptimizerState::new(b1.params(), LrSchedule::default());
    train_step_dual(&mut a1, &mut oa, &mut b1, &mut ob, &f.sup, &unl, &cfg, &RandomStream::new(5)).unwrap();

    let mut b2 = net_b.clone();
    let mut ob2 = OptimizerState::new(b2.params(), LrSchedule::default());
    let (_, gb) = step_gradients(&net_b, &f.sup, Some(&cb), 1.0, UnsupMode::MultiLoss).unwrap();
    adam_step(&mut ob2, b2.params_mut(), &gb, 0).unwrap();
    assert_eq!(b1.params(), b2.params());
}

// ---- training loop ------------------------------------------------------------------------------

fn small_data(labeled: usize, unlabeled: usize) -> TrainData {
    let cfg = SynthConfig::default();
    TrainData {
        labeled: (0..labeled as u64)
            .map(|i| {
                let s = render_synthetic_sample(&cfg, i);
                (s.image, s.keypoints)
            })
            .collect(),
        unlabeled: (0..unlabeled as u64)
            .map(|i| render_synthetic_sample(&cfg, 10_000 + i).image)
            .collect(),
    }
}

fn collect_rows(trainer: &mut Trainer, data: &TrainData, epochs: usize) -> Vec<String> {
    let mut rows = Vec::new();
    let paths = trainer.cfg.paths.len();
    for _ in 0..epochs {
        trainer.run_epoch(data, |r| rows.push(loss_csv_row(r, paths))).unwrap();
    }
    rows
}

#[test]
fn resuming_from_a_checkpoint_is_bit_identical() {
    let data = small_data(12, 20);
    let cfg = TrainConfig {
        paths: vec!["JOCO".into(), "JCCM".into()],
        epochs: 3,
        batch_size: 4,
        warmup_fraction: 0.34,
        network_mode: NetworkMode::Dual,
        seed: 5,
        ..TrainConfig::default()
    };
    let mut straight = Trainer::new(cfg.clone(), 13).unwrap();
    let all = collect_rows(&mut straight, &data, 3);

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(cfg, 13).unwrap();
    let mut rows = collect_rows(&mut first, &data, 2);
    first.save_checkpoint(dir.path()).unwrap();
    let mut resumed = Trainer::load_checkpoint(dir.path()).unwrap();
    assert_eq!((resumed.epoch, resumed.step), (2, first.step));
    rows.extend(collect_rows(&mut resumed, &data, 1));
    assert_eq!(rows, all);
    assert_eq!(resumed.nets, straight.nets);
    // First epoch is warm-up: no unsupervised columns.
    let cols: Vec<&str> = all[0].split(',').collect();
    assert_eq!((cols[3], cols[5], cols[6], cols[7]), ("0", "", "", "0"), "{}", all[0]);
}

#[test]
fn multi_loss_training_does_not_collapse() {
    let data = small_data(32, 64);
    let cfg = TrainConfig {
        paths: vec!["JOCO".into(), "JCCM".into()],
        epochs: 20,
        batch_size: 8,
        warmup_fraction: 0.0,
        seed: 3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, 13).unwrap();
    t.fit(&data, None, |_, _| Ok(())).unwrap();
    assert!(t.nets[0].params().is_finite());
    let probe: Vec<&Image> = data.unlabeled.iter().take(8).collect();
    let (hms, _) = t.nets[0].predict(&probe).unwrap();
    for h in &hms {
        for c in 0..h.channels() {
            let v = h.channel(c);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            assert!(var > 1e-6, "channel {c} collapsed (variance {var:e})");
        }
    }
}
