//! Action prediction from short pose windows.
//!
//! A window of [`WINDOW`] poses is split into a moving-average trend and a
//! seasonal remainder. Two linear maps (no bias) turn them into `horizon`
//! future poses. A softmax classifier then reads the observed window
//! concatenated with the predicted trajectory.
//!
//! Training minimizes `mse(trajectory) + lambda * cross_entropy(action)`
//! over the whole batch. Every gradient is expressed through per-batch Gram
//! matrices, so an epoch costs the same regardless of the batch size once
//! the batch is prepared.

mod io;

pub use io::{load_checkpoint, load_dataset, read_checkpoint, read_dataset, save_checkpoint, save_dataset, write_checkpoint, write_dataset};

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};

use crate::envsim::{flatten, Pose, HAND, KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::planner::{ActionLabel, ActionPrediction};

/// Frames per observed window.
pub const WINDOW: usize = 5;
/// Coordinates per frame.
pub const FRAME_DIM: usize = KEYPOINTS * 3;
pub const DEFAULT_HORIZON: usize = 5;
pub const DEFAULT_KERNEL: usize = 3;
pub const CONFIDENCE_THRESHOLD: f64 = 0.6;
const CLASSES: usize = ActionLabel::ALL.len();
const INPUT: usize = WINDOW * FRAME_DIM;

/// Working-area box per action.
pub type Boundaries = BTreeMap<ActionLabel, Aabb>;

fn point_at(row: ArrayView1<f64>, keypoint: usize) -> Point3 {
    Point3::new(row[3 * keypoint], row[3 * keypoint + 1], row[3 * keypoint + 2])
}

/// `WINDOW x FRAME_DIM` block of consecutive flattened poses.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWindow {
    frames: Array2<f64>,
}

impl PoseWindow {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.dim() != (WINDOW, FRAME_DIM) {
            return Err(Error::LengthMismatch {
                left: frames.len(),
                right: INPUT,
            });
        }
        if frames.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("pose window has non-finite coordinates".into()));
        }
        Ok(PoseWindow {
            frames: frames.as_standard_layout().into_owned(),
        })
    }

    pub fn from_poses(poses: &[Pose]) -> Result<Self> {
        if poses.len() != WINDOW {
            return Err(Error::LengthMismatch {
                left: poses.len(),
                right: WINDOW,
            });
        }
        let flat: Vec<f64> = poses.iter().flat_map(flatten).collect();
        Self::new(Array2::from_shape_vec((WINDOW, FRAME_DIM), flat).expect("shape checked"))
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn flat(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.frames.as_slice().expect("standard layout"))
    }

    /// Hand position in the most recent frame.
    pub fn last_hand(&self) -> Point3 {
        point_at(self.frames.row(WINDOW - 1), HAND)
    }
}

/// Centered moving average per coordinate with edge replication, and the
/// remainder. The two parts sum to the window exactly.
pub fn decompose(window: &PoseWindow, kernel: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    if kernel == 0 || kernel.is_multiple_of(2) || kernel > WINDOW {
        return Err(Error::BadKernel(kernel));
    }
    let x = &window.frames;
    let half = (kernel / 2) as isize;
    let mut trend = Array2::zeros(x.dim());
    for i in 0..WINDOW as isize {
        let mut row = trend.row_mut(i as usize);
        for j in -half..=half {
            let k = (i + j).clamp(0, WINDOW as isize - 1) as usize;
            row += &x.row(k);
        }
        row /= kernel as f64;
    }
    let seasonal = x - &trend;
    Ok((trend, seasonal))
}

/// Final averaged losses of a training run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Losses {
    /// Mean squared error per predicted coordinate.
    pub trajectory: f64,
    /// Mean cross-entropy per sample.
    pub classification: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorModel {
    /// `horizon * FRAME_DIM` by `WINDOW * FRAME_DIM`.
    pub trend_weights: Array2<f64>,
    pub seasonal_weights: Array2<f64>,
    /// `CLASSES` by `(WINDOW + horizon) * FRAME_DIM`.
    pub classifier_weights: Array2<f64>,
    pub classifier_bias: Array1<f64>,
    pub horizon: usize,
    pub ma_kernel: usize,
    pub losses: Losses,
}

impl PredictorModel {
    /// Trajectory maps that repeat the last observed frame, and a zero
    /// classifier.
    pub fn new(horizon: usize, ma_kernel: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Validation("horizon must be at least 1".into()));
        }
        if ma_kernel == 0 || ma_kernel.is_multiple_of(2) || ma_kernel > WINDOW {
            return Err(Error::BadKernel(ma_kernel));
        }
        let out = horizon * FRAME_DIM;
        let mut repeat = Array2::zeros((out, INPUT));
        for h in 0..horizon {
            for d in 0..FRAME_DIM {
                repeat[[h * FRAME_DIM + d, (WINDOW - 1) * FRAME_DIM + d]] = 1.0;
            }
        }
        Ok(PredictorModel {
            seasonal_weights: repeat.clone(),
            trend_weights: repeat,
            classifier_weights: Array2::zeros((CLASSES, INPUT + out)),
            classifier_bias: Array1::zeros(CLASSES),
            horizon,
            ma_kernel,
            losses: Losses::default(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.horizon * FRAME_DIM
    }

    /// Check dimensions and finiteness, e.g. after loading.
    pub fn validate(&self) -> Result<()> {
        let out = self.output_dim();
        let dims_ok = self.horizon >= 1
            && self.trend_weights.dim() == (out, INPUT)
            && self.seasonal_weights.dim() == (out, INPUT)
            && self.classifier_weights.dim() == (CLASSES, INPUT + out)
            && self.classifier_bias.len() == CLASSES;
        if !dims_ok {
            return Err(Error::Validation("predictor weight dimensions are inconsistent".into()));
        }
        if self.ma_kernel == 0 || self.ma_kernel.is_multiple_of(2) || self.ma_kernel > WINDOW {
            return Err(Error::BadKernel(self.ma_kernel));
        }
        let finite = self.trend_weights.iter().all(|x| x.is_finite())
            && self.seasonal_weights.iter().all(|x| x.is_finite())
            && self.classifier_weights.iter().all(|x| x.is_finite())
            && self.classifier_bias.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Validation("predictor weights are not finite".into()));
        }
        Ok(())
    }

    fn split(&self, window: &PoseWindow) -> (Array1<f64>, Array1<f64>) {
        let (t, s) = decompose(window, self.ma_kernel).expect("kernel validated at construction");
        (
            Array1::from_iter(t.iter().copied()),
            Array1::from_iter(s.iter().copied()),
        )
    }

    fn trajectory_flat(&self, window: &PoseWindow) -> Array1<f64> {
        let (t, s) = self.split(window);
        self.trend_weights.dot(&t) + self.seasonal_weights.dot(&s)
    }

    /// `horizon x FRAME_DIM` future poses.
    pub fn predict_trajectory(&self, window: &PoseWindow) -> Array2<f64> {
        self.trajectory_flat(window)
            .into_shape_with_order((self.horizon, FRAME_DIM))
            .expect("output length is horizon * FRAME_DIM")
    }

    /// Class probabilities given a window and its predicted trajectory.
    pub fn probabilities(&self, window: &PoseWindow, trajectory: &Array2<f64>) -> Array1<f64> {
        let w = &self.classifier_weights;
        let traj = ArrayView1::from(trajectory.as_slice().expect("standard layout"));
        let logits = w.slice(s![.., ..INPUT]).dot(&window.flat()) + w.slice(s![.., INPUT..]).dot(&traj) + &self.classifier_bias;
        softmax(logits.view())
    }

    pub fn predict_action(&self, window: &PoseWindow) -> ActionPrediction {
        let traj = self.predict_trajectory(window);
        self.classify(window, &traj)
    }

    /// Argmax over the class probabilities; ties go to the lower index.
    pub fn classify(&self, window: &PoseWindow, trajectory: &Array2<f64>) -> ActionPrediction {
        let p = self.probabilities(window, trajectory);
        let (best, conf) = p
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        ActionPrediction::new(ActionLabel::from_index(best).expect("class index"), conf)
    }
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|z| (z - m).exp());
    let total = e.sum();
    e / total
}

/// One training example: observed window, the poses that followed, and the
/// action label at the last observed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub window: PoseWindow,
    /// `horizon x FRAME_DIM`.
    pub future: Array2<f64>,
    pub label: ActionLabel,
}

/// Trajectory the action head sees during training. Inference always uses
/// the predicted one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierInput {
    /// The model's own prediction; the classification loss also shapes the
    /// trajectory maps.
    Predicted,
    /// The observed future (teacher forcing); the trajectory maps are fit
    /// by the trajectory loss alone.
    Observed,
}

/// What training minimizes: `mse + lambda_cls * ce`, with the cross-entropy
/// taken against targets smoothed by `label_smoothing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda_cls: f64,
    pub input: ClassifierInput,
    pub label_smoothing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Step size for the classifier.
    pub lr: f64,
    /// Step size for the trajectory maps.
    pub trajectory_lr: f64,
    pub epochs: usize,
    pub lambda_cls: f64,
    pub kernel: usize,
    pub horizon: usize,
    pub classifier_input: ClassifierInput,
    /// Mass moved from the true class to a uniform spread; keeps the action
    /// head from saturating.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn objective(&self) -> Objective {
        Objective {
            lambda_cls: self.lambda_cls,
            input: self.classifier_input,
            label_smoothing: self.label_smoothing,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.02,
            trajectory_lr: 1e-2,
            epochs: 2000,
            lambda_cls: 1.0,
            kernel: DEFAULT_KERNEL,
            horizon: DEFAULT_HORIZON,
            classifier_input: ClassifierInput::Observed,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

/// Batch statistics needed for the loss and its gradient.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    n: usize,
    horizon: usize,
    kernel: usize,
    x: Array2<f64>,
    t: Array2<f64>,
    s: Array2<f64>,
    f: Array2<f64>,
    onehot: Array2<f64>,
    tt: Array2<f64>,
    ts: Array2<f64>,
    ss: Array2<f64>,
    ft: Array2<f64>,
    fs: Array2<f64>,
    ff: f64,
}

impl TrainingBatch {
    pub fn new(samples: &[Sample], kernel: usize, horizon: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = samples.len();
        let out = horizon * FRAME_DIM;
        let mut x = Array2::zeros((n, INPUT));
        let mut t = Array2::zeros((n, INPUT));
        let mut f = Array2::zeros((n, out));
        let mut onehot = Array2::zeros((n, CLASSES));
        for (i, smp) in samples.iter().enumerate() {
            if smp.future.dim() != (horizon, FRAME_DIM) {
                return Err(Error::LengthMismatch {
                    left: smp.future.len(),
                    right: out,
                });
            }
            let (trend, _) = decompose(&smp.window, kernel)?;
            x.row_mut(i).assign(&smp.window.flat());
            t.row_mut(i).assign(&ArrayView1::from(trend.as_slice().expect("standard layout")));
            f.row_mut(i).assign(&ArrayView1::from(smp.future.as_standard_layout().as_slice().expect("standard layout")));
            onehot[[i, smp.label.index()]] = 1.0;
        }
        let s = &x - &t;
        Ok(TrainingBatch {
            n,
            horizon,
            kernel,
            tt: t.t().dot(&t),
            ts: t.t().dot(&s),
            ss: s.t().dot(&s),
            ft: f.t().dot(&t),
            fs: f.t().dot(&s),
            ff: f.iter().map(|v| v * v).sum(),
            x,
            t,
            s,
            f,
            onehot,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub trend: Array2<f64>,
    pub seasonal: Array2<f64>,
    pub classifier: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Total loss `mse + lambda * ce`, its parts, and the gradient with respect
/// to every weight.
pub fn loss_and_gradient(model: &PredictorModel, batch: &TrainingBatch, obj: &Objective) -> (f64, Losses, Gradient) {
    let lambda_cls = obj.lambda_cls;
    let n = batch.n as f64;
    let q = model.output_dim() as f64;
    let (a, b) = (&model.trend_weights, &model.seasonal_weights);

    // Y^T T and Y^T S through the Gram matrices.
    let yt = a.dot(&batch.tt) + b.dot(&batch.ts.t());
    let ys = a.dot(&batch.ts) + b.dot(&batch.ss);
    let yy = (&yt * a).sum() + (&ys * b).sum();
    let yf = (&batch.ft * a).sum() + (&batch.fs * b).sum();
    let sq_err = (yy - 2.0 * yf + batch.ff).max(0.0);
    let mse = sq_err / (q * n);
    let c = 2.0 / (q * n);
    let mut d_trend = (&yt - &batch.ft) * c;
    let mut d_seasonal = (&ys - &batch.fs) * c;

    let cx = model.classifier_weights.slice(s![.., ..INPUT]);
    let cy = model.classifier_weights.slice(s![.., INPUT..]);
    let mut logits = match obj.input {
        ClassifierInput::Predicted => batch.x.dot(&cx.t()) + batch.t.dot(&cy.dot(a).t()) + batch.s.dot(&cy.dot(b).t()),
        ClassifierInput::Observed => batch.x.dot(&cx.t()) + batch.f.dot(&cy.t()),
    };
    logits += &model.classifier_bias;
    let mut ce = 0.0;
    let mut g_z = Array2::zeros((batch.n, CLASSES));
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let p = softmax(row);
        let target = batch.onehot.row(i).mapv(|v| (1.0 - obj.label_smoothing) * v + obj.label_smoothing / CLASSES as f64);
        ce -= target.iter().zip(&p).map(|(y, q)| y * q.max(f64::MIN_POSITIVE).ln()).sum::<f64>();
        g_z.row_mut(i).assign(&((&p - &target) * (lambda_cls / n)));
    }
    ce /= n;

    let mut d_cls = Array2::zeros(model.classifier_weights.dim());
    d_cls.slice_mut(s![.., ..INPUT]).assign(&g_z.t().dot(&batch.x));
    match obj.input {
        ClassifierInput::Predicted => {
            let gzt = g_z.t().dot(&batch.t);
            let gzs = g_z.t().dot(&batch.s);
            d_cls.slice_mut(s![.., INPUT..]).assign(&(gzt.dot(&a.t()) + gzs.dot(&b.t())));
            d_trend += &cy.t().dot(&gzt);
            d_seasonal += &cy.t().dot(&gzs);
        }
        ClassifierInput::Observed => d_cls.slice_mut(s![.., INPUT..]).assign(&g_z.t().dot(&batch.f)),
    }

    let losses = Losses {
        trajectory: mse,
        classification: ce,
    };
    let grad = Gradient {
        trend: d_trend,
        seasonal: d_seasonal,
        classifier: d_cls,
        bias: g_z.sum_axis(Axis(0)),
    };
    (mse + lambda_cls * ce, losses, grad)
}

/// First and second moment estimates for one parameter block.
struct Adam<D: ndarray::Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
}

impl<D: ndarray::Dimension> Adam<D> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: D) -> Self {
        Adam {
            m: ndarray::Array::zeros(shape.clone()),
            v: ndarray::Array::zeros(shape),
        }
    }

    fn step(&mut self, w: &mut ndarray::Array<f64, D>, g: &ndarray::Array<f64, D>, lr: f64, t: i32) {
        let c1 = 1.0 - Self::B1.powi(t);
        let c2 = 1.0 - Self::B2.powi(t);
        ndarray::Zip::from(w).and(&mut self.m).and(&mut self.v).and(g).for_each(|w, m, v, &g| {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
        });
    }
}

/// Full-batch training with Adam-scaled gradient steps from the
/// repeat-last-frame initialization. No randomness is involved; the seed
/// is kept so runs can be labelled.
pub fn train(samples: &[Sample], cfg: &TrainConfig) -> Result<PredictorModel> {
    let batch = TrainingBatch::new(samples, cfg.kernel, cfg.horizon)?;
    train_batch(&batch, cfg)
}

pub fn train_batch(batch: &TrainingBatch, cfg: &TrainConfig) -> Result<PredictorModel> {
    if !(cfg.lr >= 0.0 && cfg.trajectory_lr >= 0.0 && cfg.lambda_cls >= 0.0) {
        return Err(Error::BadParams("learning rates and lambda must be non-negative".into()));
    }
    if !(0.0..1.0).contains(&cfg.label_smoothing) {
        return Err(Error::BadParams(format!("label smoothing {} outside [0, 1)", cfg.label_smoothing)));
    }
    let obj = cfg.objective();
    if batch.kernel != cfg.kernel || batch.horizon != cfg.horizon {
        return Err(Error::Validation("batch was prepared for a different kernel or horizon".into()));
    }
    let mut model = PredictorModel::new(cfg.horizon, cfg.kernel)?;
    let mut opt_t = Adam::new(model.trend_weights.raw_dim());
    let mut opt_s = Adam::new(model.seasonal_weights.raw_dim());
    let mut opt_c = Adam::new(model.classifier_weights.raw_dim());
    let mut opt_b = Adam::new(model.classifier_bias.raw_dim());
    for epoch in 1..=cfg.epochs {
        let (total, _, g) = loss_and_gradient(&model, batch, &obj);
        if !total.is_finite() {
            return Err(Error::DivergedLoss);
        }
        let t = epoch.min(i32::MAX as usize) as i32;
        // linear decay towards zero so the iterates settle
        let decay = 1.0 - (epoch - 1) as f64 / cfg.epochs as f64;
        opt_t.step(&mut model.trend_weights, &g.trend, cfg.trajectory_lr * decay, t);
        opt_s.step(&mut model.seasonal_weights, &g.seasonal, cfg.trajectory_lr * decay, t);
        opt_c.step(&mut model.classifier_weights, &g.classifier, cfg.lr * decay, t);
        opt_b.step(&mut model.classifier_bias, &g.bias, cfg.lr * decay, t);
    }
    let (total, losses, _) = loss_and_gradient(&model, batch, &obj);
    if !total.is_finite() {
        return Err(Error::DivergedLoss);
    }
    model.losses = losses;
    Ok(model)
}

/// Per-sample trajectory loss `|y - f|^2 / (horizon * FRAME_DIM)`.
pub fn trajectory_loss(model: &PredictorModel, window: &PoseWindow, observed: &Array2<f64>) -> f64 {
    let y = model.predict_trajectory(window);
    (&y - observed).mapv(|v| v * v).sum() / model.output_dim() as f64
}

/// Largest online step size for which a step cannot increase the loss on
/// the adapted sample.
pub fn stability_bound(model: &PredictorModel, window: &PoseWindow) -> f64 {
    let (t, s) = model.split(window);
    model.output_dim() as f64 / (t.dot(&t) + s.dot(&s))
}

/// One gradient step on the trajectory loss of a single observed sample.
/// The classifier is left untouched.
pub fn adapt_online(model: &PredictorModel, window: &PoseWindow, observed: &Array2<f64>, lr: f64) -> Result<PredictorModel> {
    if !(lr > 0.0) {
        return Err(Error::BadParams(format!("online learning rate {lr} must be positive")));
    }
    if observed.dim() != (model.horizon, FRAME_DIM) {
        return Err(Error::LengthMismatch {
            left: observed.len(),
            right: model.output_dim(),
        });
    }
    let (t, s) = model.split(window);
    let y = model.trend_weights.dot(&t) + model.seasonal_weights.dot(&s);
    let f = Array1::from_iter(observed.iter().copied());
    let r = (y - f) * (2.0 * lr / model.output_dim() as f64);
    let r = r.insert_axis(Axis(1));
    let mut out = model.clone();
    out.trend_weights -= &r.dot(&t.insert_axis(Axis(0)));
    out.seasonal_weights -= &r.dot(&s.insert_axis(Axis(0)));
    if out.trend_weights.iter().chain(out.seasonal_weights.iter()).any(|w| !w.is_finite()) {
        return Err(Error::DivergedLoss);
    }
    Ok(out)
}

/// Demote low-confidence predictions, and predictions whose hand is outside
/// the action's working area both now and at the end of the predicted
/// trajectory.
pub fn apply_restrictions(
    pred: ActionPrediction,
    window: &PoseWindow,
    trajectory: &Array2<f64>,
    boundaries: &Boundaries,
    conf_thresh: f64,
) -> ActionPrediction {
    if pred.label == ActionLabel::NoAction {
        return pred;
    }
    if pred.confidence < conf_thresh {
        return ActionPrediction::new(ActionLabel::NoAction, pred.confidence);
    }
    if let (Some(b), Some(last)) = (boundaries.get(&pred.label), trajectory.rows().into_iter().next_back()) {
        if !b.contains(window.last_hand()) && !b.contains(point_at(last, HAND)) {
            return ActionPrediction::new(ActionLabel::NoAction, pred.confidence);
        }
    }
    pred
}

/// Confusion counts (`counts[truth][pred]`) and error rates grouped by
/// severity, each as a fraction of all samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityReport {
    pub counts: [[usize; CLASSES]; CLASSES],
    /// No action predicted as an action.
    pub high: f64,
    /// One action predicted as another.
    pub medium: f64,
    /// An action predicted as no action.
    pub low: f64,
}

impl SensitivityReport {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: usize = (0..CLASSES).map(|i| self.counts[i][i]).sum();
        correct as f64 / self.total().max(1) as f64
    }
}

pub fn sensitivity_report(preds: &[ActionLabel], truths: &[ActionLabel]) -> Result<SensitivityReport> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    let mut counts = [[0usize; CLASSES]; CLASSES];
    for (p, t) in preds.iter().zip(truths) {
        counts[t.index()][p.index()] += 1;
    }
    let none = ActionLabel::NoAction.index();
    let (mut high, mut medium, mut low) = (0, 0, 0);
    for (t, row) in counts.iter().enumerate() {
        for (p, &c) in row.iter().enumerate() {
            match (t == none, p == none) {
                (true, false) => high += c,
                (false, true) => low += c,
                (false, false) if t != p => medium += c,
                _ => {}
            }
        }
    }
    let n = preds.len().max(1) as f64;
    Ok(SensitivityReport {
        counts,
        high: high as f64 / n,
        medium: medium as f64 / n,
        low: low as f64 / n,
    })
}

#[cfg(test)]
mod tests;
