//! Synthetic pose datasets and evaluation of the vision pipelines.

use std::sync::Arc;

use ndarray::Array2;

use crate::detection::{apply_filter, hierarchical_detect, hold_last, naive_detect, FilterConfig, FilterKind, SelectionMemory, DEFAULT_RANGE_M};
use crate::envsim::{flatten, ground_truth, pose_from, EnvState, EpisodeOptions, GroundTruth, ObservationFrame, Pose};
use crate::error::{Error, Result};
use crate::planner::ActionLabel;
use crate::predictor::{
    adapt_online, apply_restrictions, sensitivity_report, stability_bound, PoseWindow, PredictorModel, Sample, SensitivityReport, CONFIDENCE_THRESHOLD,
    DEFAULT_HORIZON, FRAME_DIM, WINDOW,
};
use crate::scenario::{OperatorProfile, Scenario};

use super::derive_seed;

/// Observations and ground truth of one autopilot episode.
#[derive(Debug, Clone)]
pub struct Recording {
    pub frames: Vec<ObservationFrame>,
    pub truth: Vec<GroundTruth>,
}

impl Recording {
    pub fn labels(&self) -> Vec<ActionLabel> {
        self.truth.iter().map(|g| g.label).collect()
    }

    pub fn true_poses(&self) -> Vec<Pose> {
        self.truth.iter().map(|g| g.keypoints).collect()
    }
}

/// Run the operator's hidden plan on autopilot until the queue drains or
/// `max_steps` pass.
pub fn record_episode(scenario: &Arc<Scenario>, seed: u64, opts: EpisodeOptions, max_steps: usize) -> Result<Recording> {
    let mut env = EnvState::new(Arc::clone(scenario), seed, opts)?;
    let mut rec = Recording {
        frames: Vec::new(),
        truth: Vec::new(),
    };
    for _ in 0..max_steps {
        let (obs, _) = env.step_mut()?;
        rec.frames.push(obs);
        rec.truth.push(ground_truth(&env));
        if !env.operator().is_busy() {
            break;
        }
    }
    Ok(rec)
}

/// Keypoint source feeding the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Hierarchical,
    Naive,
    Filtered(FilterKind),
}

impl Pipeline {
    /// Every pipeline compared in the action-prediction study.
    pub const STUDY: [Pipeline; 6] = [
        Pipeline::Hierarchical,
        Pipeline::Filtered(FilterKind::Median),
        Pipeline::Filtered(FilterKind::Wiener),
        Pipeline::Filtered(FilterKind::Kalman),
        Pipeline::Filtered(FilterKind::Ema),
        Pipeline::Naive,
    ];

    pub fn name(&self) -> String {
        match self {
            Pipeline::Hierarchical => "hierarchical".into(),
            Pipeline::Naive => "naive".into(),
            Pipeline::Filtered(k) => format!("naive+{}", k.name()),
        }
    }
}

fn filter_config(kind: FilterKind) -> FilterConfig {
    match kind {
        FilterKind::Median => FilterConfig::median(),
        FilterKind::Wiener => FilterConfig::wiener(),
        FilterKind::Kalman => FilterConfig::kalman(),
        FilterKind::Ema => FilterConfig::ema(),
        FilterKind::None => FilterConfig::none(),
    }
}

/// Operator pose the robot assumes before anyone has been detected.
pub fn prior_pose(scenario: &Scenario) -> Pose {
    pose_from(scenario.operator.station, scenario.operator.rest_hand)
}

/// Per-frame operator pose as seen through `pipeline`. Frames without a
/// detection repeat the previous pose.
pub fn extract_stream(scenario: &Scenario, rec: &Recording, pipeline: Pipeline) -> Result<Vec<Pose>> {
    let fill = prior_pose(scenario);
    let detected: Vec<_> = match pipeline {
        Pipeline::Hierarchical => {
            let mut memory = SelectionMemory::default();
            rec.frames.iter().map(|f| hierarchical_detect(f, DEFAULT_RANGE_M, &mut memory)).collect()
        }
        Pipeline::Naive | Pipeline::Filtered(_) => rec.frames.iter().map(naive_detect).collect(),
    };
    let held = hold_last(&detected, fill);
    let frames = match pipeline {
        Pipeline::Filtered(kind) => apply_filter(&filter_config(kind), &held)?,
        _ => held,
    };
    Ok(frames.into_iter().map(|f| f.keypoints).collect())
}

/// One flattened pose per row.
pub fn pose_rows(poses: &[Pose]) -> Array2<f64> {
    let flat: Vec<f64> = poses.iter().flat_map(flatten).collect();
    Array2::from_shape_vec((poses.len(), FRAME_DIM), flat).expect("rows of FRAME_DIM")
}

/// Sliding windows over a pose stream: `WINDOW` observed poses, the next
/// `horizon` poses, and the label at the last observed pose.
pub fn windows(stream: &[Pose], labels: &[ActionLabel], horizon: usize, stride: usize) -> Result<Vec<Sample>> {
    if stream.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: stream.len(),
            right: labels.len(),
        });
    }
    if stride == 0 || horizon == 0 {
        return Err(Error::BadParams("stride and horizon must be positive".into()));
    }
    let mut out = Vec::new();
    let mut i = WINDOW - 1;
    while i + horizon < stream.len() {
        let window = PoseWindow::from_poses(&stream[i + 1 - WINDOW..=i])?;
        out.push(Sample {
            window,
            future: pose_rows(&stream[i + 1..=i + horizon]),
            label: labels[i],
        });
        i += stride;
    }
    Ok(out)
}

/// A simulated user: motion profile and hidden plan.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub profile: OperatorProfile,
    pub plan: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub seed: u64,
    pub horizon: usize,
    pub train_stride: usize,
    pub test_stride: usize,
    /// Profiles seen in training; the rest are held out.
    pub seen_profiles: usize,
    pub max_steps: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 0,
            horizon: DEFAULT_HORIZON,
            train_stride: 2,
            test_stride: 3,
            seen_profiles: 2,
            max_steps: 4000,
        }
    }
}

fn plan_ids(scenario: &Scenario) -> Vec<String> {
    scenario.plans.keys().cloned().collect()
}

/// Training users: each seen profile with every plan.
pub fn training_users(scenario: &Scenario, cfg: &DatasetConfig) -> Vec<UserSpec> {
    let plans = plan_ids(scenario);
    scenario
        .profiles
        .iter()
        .take(cfg.seen_profiles)
        .flat_map(|p| {
            plans.iter().map(move |plan| UserSpec {
                profile: p.clone(),
                plan: plan.clone(),
            })
        })
        .collect()
}

/// Test users: every profile once, plans alternating. The second element
/// tells whether the profile was seen in training.
pub fn test_users(scenario: &Scenario, cfg: &DatasetConfig) -> Vec<(UserSpec, bool)> {
    let plans = plan_ids(scenario);
    scenario
        .profiles
        .iter()
        .enumerate()
        .map(|(i, p)| {
            (
                UserSpec {
                    profile: p.clone(),
                    plan: plans[i % plans.len()].clone(),
                },
                i < cfg.seen_profiles,
            )
        })
        .collect()
}

fn record_user(scenario: &Arc<Scenario>, user: &UserSpec, seed: u64, cfg: &DatasetConfig) -> Result<Recording> {
    record_episode(
        scenario,
        seed,
        EpisodeOptions {
            profile: Some(user.profile.clone()),
            plan: Some(user.plan.clone()),
            autopilot: true,
            ..Default::default()
        },
        cfg.max_steps,
    )
}

/// Hierarchically detected windows from the training users.
pub fn training_set(scenario: &Arc<Scenario>, cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, user) in training_users(scenario, cfg).iter().enumerate() {
        let rec = record_user(scenario, user, derive_seed(cfg.seed, &[1, i as u64]), cfg)?;
        let stream = extract_stream(scenario, &rec, Pipeline::Hierarchical)?;
        out.extend(windows(&stream, &rec.labels(), cfg.horizon, cfg.train_stride)?);
    }
    Ok(out)
}

/// Test episodes, one per test user, with seeds disjoint from training.
pub fn test_recordings(scenario: &Arc<Scenario>, cfg: &DatasetConfig) -> Result<Vec<(UserSpec, bool, Recording)>> {
    test_users(scenario, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (user, seen))| {
            let rec = record_user(scenario, &user, derive_seed(cfg.seed, &[2, i as u64]), cfg)?;
            Ok((user, seen, rec))
        })
        .collect()
}

/// Write the hierarchically detected pose streams of the training and test
/// users as CSV, one row per step. Returns the number of rows.
pub fn write_streams<W: std::io::Write>(scenario: &Arc<Scenario>, cfg: &DatasetConfig, w: W) -> Result<usize> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["split".to_string(), "profile".into(), "plan".into(), "step".into(), "label".into()];
    for k in 0..FRAME_DIM / 3 {
        header.extend(["x", "y", "z"].map(|c| format!("{c}{k}")));
    }
    wr.write_record(&header)?;
    let train = training_users(scenario, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, u)| ("train", u, derive_seed(cfg.seed, &[1, i as u64])));
    let test = test_users(scenario, cfg)
        .into_iter()
        .enumerate()
        .map(|(i, (u, _))| ("test", u, derive_seed(cfg.seed, &[2, i as u64])));
    let mut rows = 0;
    for (split, user, seed) in train.chain(test) {
        let rec = record_user(scenario, &user, seed, cfg)?;
        let stream = extract_stream(scenario, &rec, Pipeline::Hierarchical)?;
        for (step, (pose, label)) in stream.iter().zip(rec.labels()).enumerate() {
            let mut row = vec![split.to_string(), user.profile.name.clone(), user.plan.clone(), step.to_string(), label.to_string()];
            row.extend(flatten(pose).iter().map(|v| v.to_string()));
            wr.write_record(&row)?;
            rows += 1;
        }
    }
    wr.flush()?;
    Ok(rows)
}

pub fn test_set(scenario: &Scenario, recs: &[(UserSpec, bool, Recording)], pipeline: Pipeline, cfg: &DatasetConfig) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (_, _, rec) in recs {
        let stream = extract_stream(scenario, rec, pipeline)?;
        out.extend(windows(&stream, &rec.labels(), cfg.horizon, cfg.test_stride)?);
    }
    Ok(out)
}

/// Accuracy and error severities of one pipeline on the test set, with
/// and without the confidence and boundary restrictions.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineScore {
    pub pipeline: Pipeline,
    pub samples: usize,
    pub unrestricted: SensitivityReport,
    pub restricted: SensitivityReport,
    /// Samples where a restriction turned no action into an action.
    pub monotonicity_violations: usize,
}

pub fn score_samples(model: &PredictorModel, scenario: &Scenario, pipeline: Pipeline, samples: &[Sample]) -> Result<PipelineScore> {
    let truths: Vec<ActionLabel> = samples.iter().map(|s| s.label).collect();
    let mut raw = Vec::with_capacity(samples.len());
    let mut restricted = Vec::with_capacity(samples.len());
    let mut violations = 0;
    for s in samples {
        let traj = model.predict_trajectory(&s.window);
        let p = model.classify(&s.window, &traj);
        let r = apply_restrictions(p, &s.window, &traj, &scenario.boundaries, CONFIDENCE_THRESHOLD);
        if p.label == ActionLabel::NoAction && r.label != ActionLabel::NoAction {
            violations += 1;
        }
        raw.push(p.label);
        restricted.push(r.label);
    }
    Ok(PipelineScore {
        pipeline,
        samples: samples.len(),
        unrestricted: sensitivity_report(&raw, &truths)?,
        restricted: sensitivity_report(&restricted, &truths)?,
        monotonicity_violations: violations,
    })
}

pub fn evaluate_pipelines(model: &PredictorModel, scenario: &Scenario, recs: &[(UserSpec, bool, Recording)], cfg: &DatasetConfig) -> Result<Vec<PipelineScore>> {
    Pipeline::STUDY
        .iter()
        .map(|p| score_samples(model, scenario, *p, &test_set(scenario, recs, *p, cfg)?))
        .collect()
}

/// Trajectory error and action accuracy on held-out users, with a frozen
/// model and with online adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationResult {
    pub windows: usize,
    pub mse_static: f64,
    pub mse_adapted: f64,
    pub accuracy_static: f64,
    pub accuracy_adapted: f64,
}

/// Online step size as a fraction of the stability bound.
pub const DEFAULT_ADAPTATION_RATE: f64 = 0.003;

/// Replay each user's hierarchical stream one step at a time. Before the
/// prediction at step `i`, the adapting model takes one step on the window
/// whose future has just been fully observed. Errors are measured before
/// that window is used, so no future information leaks in. The step size is
/// `rate` times the stability bound of the adapted window.
pub fn adaptation_study(model: &PredictorModel, scenario: &Scenario, recs: &[&Recording], rate: f64) -> Result<AdaptationResult> {
    let h = model.horizon;
    let (mut n, mut se_static, mut se_adapted, mut ok_static, mut ok_adapted) = (0usize, 0.0, 0.0, 0usize, 0usize);
    for rec in recs {
        let stream = extract_stream(scenario, rec, Pipeline::Hierarchical)?;
        let samples = windows(&stream, &rec.labels(), h, 1)?;
        let mut adapted = model.clone();
        for (i, s) in samples.iter().enumerate() {
            if i >= h {
                let old = &samples[i - h];
                let lr = rate * stability_bound(&adapted, &old.window);
                adapted = adapt_online(&adapted, &old.window, &old.future, lr)?;
            }
            let q = s.future.len() as f64;
            let ys = model.predict_trajectory(&s.window);
            let ya = adapted.predict_trajectory(&s.window);
            se_static += (&ys - &s.future).mapv(|v| v * v).sum() / q;
            se_adapted += (&ya - &s.future).mapv(|v| v * v).sum() / q;
            ok_static += usize::from(model.classify(&s.window, &ys).label == s.label);
            ok_adapted += usize::from(adapted.classify(&s.window, &ya).label == s.label);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let nf = n as f64;
    Ok(AdaptationResult {
        windows: n,
        mse_static: se_static / nf,
        mse_adapted: se_adapted / nf,
        accuracy_static: ok_static as f64 / nf,
        accuracy_adapted: ok_adapted as f64 / nf,
    })
}
