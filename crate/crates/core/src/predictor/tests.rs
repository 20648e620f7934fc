use super::*;
use crate::envsim::pose_from;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn window_from(f: impl FnMut((usize, usize)) -> f64) -> PoseWindow {
    PoseWindow::new(Array2::from_shape_fn((WINDOW, FRAME_DIM), f)).unwrap()
}

fn random_window(rng: &mut impl Rng) -> PoseWindow {
    window_from(|(_, _)| rng.random_range(-1.0..1.0))
}

fn random_sample(rng: &mut impl Rng, horizon: usize) -> Sample {
    Sample {
        window: random_window(rng),
        future: Array2::from_shape_fn((horizon, FRAME_DIM), |_| rng.random_range(-1.0..1.0)),
        label: ActionLabel::from_index(rng.random_range(0..4)).unwrap(),
    }
}

fn random_model(rng: &mut impl Rng, horizon: usize) -> PredictorModel {
    let mut m = PredictorModel::new(horizon, 3).unwrap();
    m.trend_weights.mapv_inplace(|w| w + rng.random_range(-0.05..0.05));
    m.seasonal_weights.mapv_inplace(|w| w + rng.random_range(-0.05..0.05));
    m.classifier_weights.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    m.classifier_bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    m
}

/// Per-sample forward pass written out with explicit loops.
fn naive_loss(m: &PredictorModel, samples: &[Sample], obj: &Objective) -> f64 {
    let q = m.output_dim();
    let (mut sq, mut ce) = (0.0, 0.0);
    for smp in samples {
        let x: Vec<f64> = smp.window.frames().iter().copied().collect();
        let mut t = vec![0.0; INPUT];
        for i in 0..WINDOW {
            for d in 0..FRAME_DIM {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(WINDOW - 1);
                let mid = x[i * FRAME_DIM + d];
                t[i * FRAME_DIM + d] = (x[lo * FRAME_DIM + d] + mid + x[hi * FRAME_DIM + d]) / 3.0;
            }
        }
        let mut y = vec![0.0; q];
        for (o, yo) in y.iter_mut().enumerate() {
            for k in 0..INPUT {
                *yo += m.trend_weights[[o, k]] * t[k] + m.seasonal_weights[[o, k]] * (x[k] - t[k]);
            }
        }
        let f: Vec<f64> = smp.future.iter().copied().collect();
        sq += y.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let head_input = match obj.input {
            ClassifierInput::Predicted => &y,
            ClassifierInput::Observed => &f,
        };
        let u: Vec<f64> = x.iter().chain(head_input).copied().collect();
        let z: Vec<f64> = (0..CLASSES)
            .map(|c| m.classifier_bias[c] + u.iter().enumerate().map(|(k, v)| m.classifier_weights[[c, k]] * v).sum::<f64>())
            .collect();
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        for (c, zc) in z.iter().enumerate() {
            let target = if c == smp.label.index() { 1.0 - obj.label_smoothing } else { 0.0 } + obj.label_smoothing / CLASSES as f64;
            ce += target * (lse - zc);
        }
    }
    let n = samples.len() as f64;
    sq / (q as f64 * n) + obj.lambda_cls * ce / n
}

fn perturbed(m: &PredictorModel, dir: &Gradient, eps: f64) -> PredictorModel {
    let mut out = m.clone();
    out.trend_weights.scaled_add(eps, &dir.trend);
    out.seasonal_weights.scaled_add(eps, &dir.seasonal);
    out.classifier_weights.scaled_add(eps, &dir.classifier);
    out.classifier_bias.scaled_add(eps, &dir.bias);
    out
}

fn dot(a: &Gradient, b: &Gradient) -> f64 {
    (&a.trend * &b.trend).sum() + (&a.seasonal * &b.seasonal).sum() + (&a.classifier * &b.classifier).sum() + (&a.bias * &b.bias).sum()
}

#[test]
fn decompose_examples() {
    let c = window_from(|(_, d)| d as f64 * 0.1);
    let (t, s) = decompose(&c, 3).unwrap();
    assert!((&t - c.frames()).iter().all(|v| v.abs() < 1e-15));
    assert!(s.iter().all(|v| v.abs() < 1e-15));

    let w = window_from(|(i, d)| (i * d) as f64 * 0.01 + 0.3);
    let (t, _) = decompose(&w, 1).unwrap();
    assert_eq!(&t, w.frames());

    // ramp: interior frames average to themselves, edges pull toward the
    // replicated end frame by a third of a step
    let ramp = window_from(|(i, d)| 2.0 * i as f64 + d as f64);
    let (t, s) = decompose(&ramp, 3).unwrap();
    for d in 0..FRAME_DIM {
        assert!((s[[0, d]] + 2.0 / 3.0).abs() < 1e-12);
        assert!((s[[4, d]] - 2.0 / 3.0).abs() < 1e-12);
        for i in 1..4 {
            assert!(s[[i, d]].abs() < 1e-12);
        }
    }
    assert_eq!(&t + &s, *ramp.frames());

    for k in [0, 2, 7] {
        assert_eq!(decompose(&ramp, k), Err(Error::BadKernel(k)));
    }
}

#[test]
fn window_shape_is_checked() {
    assert!(PoseWindow::new(Array2::zeros((4, FRAME_DIM))).is_err());
    let p = pose_from(Point3::new(1.0, 0.0, 0.0), Point3::new(0.9, 0.0, 0.2));
    assert!(PoseWindow::from_poses(&[p; 4]).is_err());
    let w = PoseWindow::from_poses(&[p; 5]).unwrap();
    assert_eq!(w.last_hand(), p[HAND]);
}

#[test]
fn fresh_model_repeats_the_last_frame() {
    let m = PredictorModel::new(5, 3).unwrap();
    let zero = window_from(|(_, _)| 0.0);
    assert!(m.predict_trajectory(&zero).iter().all(|v| *v == 0.0));
    let ramp = window_from(|(i, d)| i as f64 + d as f64 * 0.1);
    let y = m.predict_trajectory(&ramp);
    for h in 0..5 {
        for d in 0..FRAME_DIM {
            assert!((y[[h, d]] - ramp.frames()[[4, d]]).abs() < 1e-12);
        }
    }
    let p = m.predict_action(&ramp);
    assert_eq!(p.label, ActionLabel::NoAction);
    assert_eq!(p.confidence, 0.25);
    assert!(PredictorModel::new(0, 3).is_err());
    assert_eq!(PredictorModel::new(5, 4), Err(Error::BadKernel(4)));
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let horizon = rng.random_range(1..=3);
        let samples: Vec<Sample> = (0..rng.random_range(1..=4)).map(|_| random_sample(&mut rng, horizon)).collect();
        let m = random_model(&mut rng, horizon);
        let obj = Objective {
            lambda_cls: rng.random_range(0.0..2.0),
            input: if rng.random() { ClassifierInput::Predicted } else { ClassifierInput::Observed },
            label_smoothing: rng.random_range(0.0..0.3),
        };
        let batch = TrainingBatch::new(&samples, 3, horizon).unwrap();
        let (total, _, g) = loss_and_gradient(&m, &batch, &obj);
        let direct = naive_loss(&m, &samples, &obj);
        assert!((total - direct).abs() < 1e-9 * direct.abs().max(1.0));
        let dir = Gradient {
            trend: g.trend.mapv(|_| rng.random_range(-1.0..1.0)),
            seasonal: g.seasonal.mapv(|_| rng.random_range(-1.0..1.0)),
            classifier: g.classifier.mapv(|_| rng.random_range(-1.0..1.0)),
            bias: g.bias.mapv(|_| rng.random_range(-1.0..1.0)),
        };
        let eps = 1e-5;
        let fd = (naive_loss(&perturbed(&m, &dir, eps), &samples, &obj) - naive_loss(&perturbed(&m, &dir, -eps), &samples, &obj)) / (2.0 * eps);
        let an = dot(&g, &dir);
        assert!((fd - an).abs() <= 1e-5 * an.abs().max(fd.abs()), "fd {fd} analytic {an}");
    }
}

#[test]
fn zero_lambda_leaves_the_classifier_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let samples: Vec<Sample> = (0..6).map(|_| random_sample(&mut rng, 5)).collect();
    let cfg = TrainConfig {
        lambda_cls: 0.0,
        epochs: 20,
        ..TrainConfig::default()
    };
    let m = train(&samples, &cfg).unwrap();
    let fresh = PredictorModel::new(5, 3).unwrap();
    assert_eq!(m.classifier_weights, fresh.classifier_weights);
    assert_eq!(m.classifier_bias, fresh.classifier_bias);
    assert_ne!(m.trend_weights, fresh.trend_weights);
}

#[test]
fn stationary_no_action_windows_are_learned() {
    let p = pose_from(Point3::new(1.25, 0.0, 0.0), Point3::new(1.02, -0.08, 0.16));
    let w = PoseWindow::from_poses(&[p; 5]).unwrap();
    let future = Array2::from_shape_fn((5, FRAME_DIM), |(_, d)| w.frames()[[4, d]]);
    let samples = vec![
        Sample {
            window: w.clone(),
            future,
            label: ActionLabel::NoAction,
        };
        8
    ];
    let m = train(&samples, &TrainConfig { epochs: 50, ..TrainConfig::default() }).unwrap();
    let pred = m.predict_action(&w);
    assert_eq!(pred.label, ActionLabel::NoAction);
    assert!(pred.confidence > 0.5);
    let y = m.predict_trajectory(&w);
    let mse = (&y - &samples[0].future).mapv(|v| v * v).mean().unwrap();
    assert!((mse - m.losses.trajectory).abs() < 1e-12);
    assert!(mse < 1e-4);
    assert_eq!(train(&[], &TrainConfig::default()), Err(Error::EmptyDataset));
}

#[test]
fn online_adaptation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_model(&mut rng, 5);
    let w = random_window(&mut rng);
    let exact = m.predict_trajectory(&w);
    assert_eq!(adapt_online(&m, &w, &exact, 0.1).unwrap(), m);
    assert!(matches!(adapt_online(&m, &w, &exact, 0.0), Err(Error::BadParams(_))));

    // a user whose poses are shifted by a constant offset
    let offset = Array2::from_elem((5, FRAME_DIM), 0.05);
    let target = &exact + &offset;
    let shifted = window_from(|(i, d)| w.frames()[[i, d]] + 0.05);
    let bound = stability_bound(&m, &shifted);
    let mut cur = m.clone();
    let mut last = trajectory_loss(&cur, &shifted, &target);
    for _ in 0..20 {
        cur = adapt_online(&cur, &shifted, &target, 0.3 * bound).unwrap();
        let l = trajectory_loss(&cur, &shifted, &target);
        assert!(l <= last + 1e-15);
        last = l;
    }
    assert!(last < 1e-6);
    assert_eq!(cur.classifier_weights, m.classifier_weights);
}

fn boxes() -> Boundaries {
    let b = |lo: [f64; 3], hi: [f64; 3]| Aabb::new(lo.into(), hi.into()).unwrap();
    Boundaries::from([
        (ActionLabel::GetScrews, b([0.52, -0.20, -0.08], [0.90, 0.10, 0.22])),
        (ActionLabel::GetWheels, b([0.68, 0.12, -0.08], [1.00, 0.58, 0.22])),
    ])
}

fn hand_window(hand: Point3) -> (PoseWindow, Array2<f64>) {
    let p = pose_from(Point3::new(1.25, 0.0, 0.0), hand);
    let w = PoseWindow::from_poses(&[p; 5]).unwrap();
    let traj = PredictorModel::new(5, 3).unwrap().predict_trajectory(&w);
    (w, traj)
}

#[test]
fn restriction_examples() {
    let (w, traj) = hand_window(Point3::new(0.85, 0.40, 0.05));
    let b = boxes();
    let r = |label, conf| apply_restrictions(ActionPrediction::new(label, conf), &w, &traj, &b, CONFIDENCE_THRESHOLD).label;
    assert_eq!(r(ActionLabel::GetScrews, 0.55), ActionLabel::NoAction);
    assert_eq!(r(ActionLabel::GetWheels, 0.9), ActionLabel::GetWheels);
    let (far, far_traj) = hand_window(Point3::new(1.3, 0.9, 0.5));
    let p = apply_restrictions(ActionPrediction::new(ActionLabel::GetWheels, 0.9), &far, &far_traj, &b, CONFIDENCE_THRESHOLD);
    assert_eq!(p.label, ActionLabel::NoAction);
}

#[test]
fn sensitivity_examples() {
    use ActionLabel::*;
    let truths = [NoAction, GetConnectors, GetScrews, GetWheels];
    let r = sensitivity_report(&truths, &truths).unwrap();
    assert_eq!((r.high, r.medium, r.low, r.accuracy()), (0.0, 0.0, 0.0, 1.0));
    let r = sensitivity_report(&[GetConnectors; 3], &[NoAction; 3]).unwrap();
    assert_eq!(r.high, 1.0);
    let r = sensitivity_report(&[GetScrews, NoAction, NoAction, GetWheels], &[GetConnectors, GetWheels, NoAction, GetWheels]).unwrap();
    assert_eq!((r.high, r.medium, r.low), (0.0, 0.25, 0.25));
    assert!(sensitivity_report(&[NoAction], &[]).is_err());
}

#[test]
fn checkpoint_and_dataset_files_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = random_model(&mut rng, 2);
    m.losses = Losses {
        trajectory: 0.125,
        classification: 1.0 / 3.0,
    };
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert_eq!(read_checkpoint(&buf[..]).unwrap(), m);
    assert!(read_checkpoint(&buf[..buf.len() / 2]).is_err());
    assert!(read_checkpoint("hrc-predictor 2\n".as_bytes()).is_err());

    let samples: Vec<Sample> = (0..3).map(|_| random_sample(&mut rng, 2)).collect();
    let mut buf = Vec::new();
    write_dataset(&samples, &mut buf).unwrap();
    assert_eq!(buf.iter().filter(|b| **b == b'\n').count(), 3);
    assert_eq!(read_dataset(&buf[..]).unwrap(), samples);
    assert!(read_dataset("1,2,3\n".as_bytes()).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn label() -> impl Strategy<Value = ActionLabel> {
        (0usize..4).prop_map(|i| ActionLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn decomposition_is_exact(seed in any::<u64>(), k in prop_oneof![Just(1usize), Just(3), Just(5)]) {
            let w = random_window(&mut ChaCha8Rng::seed_from_u64(seed));
            let (t, s) = decompose(&w, k).unwrap();
            prop_assert!((&t + &s - w.frames()).iter().all(|v| v.abs() <= 1e-15));
        }

        #[test]
        fn probabilities_are_normalized(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, 2);
            let w = random_window(&mut rng);
            let p = m.probabilities(&w, &m.predict_trajectory(&w));
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
            let a = m.predict_action(&w);
            prop_assert!((0.0..=1.0).contains(&a.confidence));
        }

        #[test]
        fn restriction_never_creates_actions(l in label(), conf in 0.0f64..1.0, x in 0.3f64..1.4, y in -0.8f64..0.8) {
            let (w, traj) = hand_window(Point3::new(x, y, 0.05));
            let p = apply_restrictions(ActionPrediction::new(l, conf), &w, &traj, &boxes(), CONFIDENCE_THRESHOLD);
            prop_assert!(p.label == l || p.label == ActionLabel::NoAction);
            if l == ActionLabel::NoAction {
                prop_assert_eq!(p.label, ActionLabel::NoAction);
            }
        }

        #[test]
        fn adaptation_below_the_bound_never_hurts(seed in any::<u64>(), frac in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_model(&mut rng, 3);
            let s = random_sample(&mut rng, 3);
            let before = trajectory_loss(&m, &s.window, &s.future);
            let lr = frac * stability_bound(&m, &s.window);
            let after = trajectory_loss(&adapt_online(&m, &s.window, &s.future, lr).unwrap(), &s.window, &s.future);
            prop_assert!(after <= before * (1.0 + 1e-12));
        }
    }
}

