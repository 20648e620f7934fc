//! Experiment harness: seeded factorial study, summaries and the detection
//! case study.

pub mod dataset;
pub mod study;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::detection::{keypoint_deviation, variance};
use crate::envsim::EpisodeOptions;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::predictor::{train, PredictorModel, TrainConfig};
use crate::scenario::Scenario;
use crate::taskgraph::{NodeId, TaskGraph};

use dataset::{extract_stream, record_episode, training_set, DatasetConfig, Pipeline};
pub use study::{run_trial, trial_user, StudyContext};

/// Default per-trial step budget.
pub const DEFAULT_TIMEOUT_STEPS: u64 = 3600;

/// Mix `parts` into `master` with a splitmix64 chain.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    parts.iter().fold(mix(master), |acc, p| mix(acc ^ mix(*p)))
}

/// Planning (`pp`) and perception (`pm`) condition.
///
/// `pp = 0` serves the robot vertices of the default plan in their fixed
/// order, each once the operator's preceding step is observed; `pp = 1`
/// predicts plans over all routes and acts ahead. `pm = 0` is vision only, `pm = 1`
/// speech only, `pm = 2` both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group {
    pub pp: u8,
    pub pm: u8,
}

impl Group {
    pub const ALL: [Group; 6] = [
        Group { pp: 0, pm: 0 },
        Group { pp: 0, pm: 1 },
        Group { pp: 0, pm: 2 },
        Group { pp: 1, pm: 0 },
        Group { pp: 1, pm: 1 },
        Group { pp: 1, pm: 2 },
    ];

    pub fn new(pp: u8, pm: u8) -> Result<Self> {
        if pp > 1 || pm > 2 {
            return Err(Error::Config(format!("no group PP={pp} PM={pm}")));
        }
        Ok(Group { pp, pm })
    }
}

/// Sub-task of the assembly: the first stage, the middle stages, the last
/// stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Task {
    Task1,
    Task2,
    Task3,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Task1, Task::Task2, Task::Task3];

    pub fn number(self) -> u8 {
        match self {
            Task::Task1 => 1,
            Task::Task2 => 2,
            Task::Task3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        Task::ALL.get((n as usize).wrapping_sub(1)).copied().ok_or_else(|| Error::Config(format!("no task {n}")))
    }

    /// Nodes of this task in `graph`.
    pub fn nodes(self, graph: &TaskGraph) -> BTreeSet<NodeId> {
        let stage_nodes = |n: NodeId| graph.stage_of(n).map(|s| s.nodes.clone()).unwrap_or_else(|| [n].into());
        let first: BTreeSet<NodeId> = graph.start_nodes.iter().flat_map(|n| stage_nodes(*n)).collect();
        let last = stage_nodes(graph.goal);
        match self {
            Task::Task1 => first,
            Task::Task3 => last,
            Task::Task2 => graph.nodes.keys().filter(|n| !first.contains(n) && !last.contains(n)).copied().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Scenario and graph files; the shipped toy-car workcell when unset.
    pub scenario: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    /// Predictor checkpoint; trained from the seed when unset.
    pub model: Option<PathBuf>,
    pub groups: Vec<Group>,
    pub tasks: Vec<Task>,
    pub trials_per_cell: usize,
    pub seed: u64,
    pub timeout_steps: u64,
    pub lambda: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: None,
            graph: None,
            model: None,
            groups: Group::ALL.to_vec(),
            tasks: Task::ALL.to_vec(),
            trials_per_cell: 40,
            seed: 0,
            timeout_steps: DEFAULT_TIMEOUT_STEPS,
            lambda: crate::controller::DEFAULT_LAMBDA,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials_per_cell == 0 {
            return Err(Error::Config("trials_per_cell must be at least 1".into()));
        }
        if self.groups.is_empty() {
            return Err(Error::Config("at least one group is required".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        if let Some(g) = self.groups.iter().find(|g| g.pp > 1 || g.pm > 2) {
            return Err(Error::Config(format!("no group PP={} PM={}", g.pp, g.pm)));
        }
        if self.timeout_steps == 0 {
            return Err(Error::Config("timeout_steps must be positive".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be a non-negative number".into()));
        }
        Ok(())
    }

    /// Parse a TOML config; unset keys keep their defaults. Relative paths
    /// are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let f: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        let d = ExperimentConfig::default();
        let resolve = |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });
        let tasks = match f.tasks {
            Some(t) => t.into_iter().map(Task::from_number).collect::<Result<Vec<_>>>()?,
            None => d.tasks,
        };
        let cfg = ExperimentConfig {
            scenario: resolve(f.scenario),
            graph: resolve(f.graph),
            model: resolve(f.model),
            groups: f.groups.unwrap_or(d.groups),
            tasks,
            trials_per_cell: f.trials_per_cell.unwrap_or(d.trials_per_cell),
            seed: f.seed.unwrap_or(d.seed),
            timeout_steps: f.timeout_steps.unwrap_or(d.timeout_steps),
            lambda: f.lambda.unwrap_or(d.lambda),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scenario named by the config.
    pub fn load_scenario(&self) -> Result<Scenario> {
        load_scenario(self.graph.as_deref(), self.scenario.as_deref())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario: Option<PathBuf>,
    graph: Option<PathBuf>,
    model: Option<PathBuf>,
    groups: Option<Vec<Group>>,
    tasks: Option<Vec<u8>>,
    trials_per_cell: Option<usize>,
    seed: Option<u64>,
    timeout_steps: Option<u64>,
    lambda: Option<f64>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Scenario from files, falling back to the shipped toy car for either part.
pub fn load_scenario(graph: Option<&Path>, scenario: Option<&Path>) -> Result<Scenario> {
    if graph.is_none() && scenario.is_none() {
        return Ok(Scenario::toycar());
    }
    let g = match graph {
        Some(p) => read_text(p)?,
        None => crate::scenario::TOYCAR_GRAPH.to_string(),
    };
    let s = match scenario {
        Some(p) => read_text(p)?,
        None => crate::scenario::TOYCAR_SCENARIO.to_string(),
    };
    Scenario::from_strs(&g, &s)
}

/// Predictor trained on the hierarchical training set derived from `seed`.
pub fn default_model(scenario: &Arc<Scenario>, seed: u64) -> Result<PredictorModel> {
    let cfg = DatasetConfig {
        seed,
        ..Default::default()
    };
    let samples = training_set(scenario, &cfg)?;
    train(
        &samples,
        &TrainConfig {
            seed,
            ..Default::default()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub pp: u8,
    pub pm: u8,
    pub task: u8,
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub completion_steps: u64,
    pub plan_satisfied: bool,
    pub recoveries: u32,
    pub objective: f64,
}

impl TrialRecord {
    pub fn group(&self) -> Group {
        Group { pp: self.pp, pm: self.pm }
    }

    fn cell(&self) -> (u8, u8, u8, usize) {
        (self.pp, self.pm, self.task, self.trial)
    }
}

/// Seed of one trial cell.
pub fn trial_seed(master: u64, group: Group, task: Task, trial: usize) -> u64 {
    derive_seed(master, &[group.pp as u64, group.pm as u64, task.number() as u64, trial as u64])
}

/// Run every (group, task, trial) cell. Loads the scenario and predictor
/// named by `cfg`.
pub fn run_factorial(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let scenario = Arc::new(cfg.load_scenario()?);
    let needs_model = cfg.groups.iter().any(|g| g.pm != 1);
    let model = match (&cfg.model, needs_model) {
        (_, false) => None,
        (Some(p), true) => Some(crate::predictor::load_checkpoint(p)?),
        (None, true) => Some(default_model(&scenario, cfg.seed)?),
    };
    let ctx = StudyContext {
        scenario,
        model,
        timeout_steps: cfg.timeout_steps,
        lambda: cfg.lambda,
    };
    run_factorial_with(cfg, &ctx)
}

/// Run every cell against a prepared context. A trial that errors is
/// recorded as a failure.
pub fn run_factorial_with(cfg: &ExperimentConfig, ctx: &StudyContext) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let groups: BTreeSet<Group> = cfg.groups.iter().copied().collect();
    let tasks: BTreeSet<Task> = cfg.tasks.iter().copied().collect();
    let mut out = Vec::new();
    for g in &groups {
        for t in &tasks {
            for trial in 0..cfg.trials_per_cell {
                let seed = trial_seed(cfg.seed, *g, *t, trial);
                let rec = run_trial(ctx, *g, *t, trial, seed).unwrap_or(TrialRecord {
                    pp: g.pp,
                    pm: g.pm,
                    task: t.number(),
                    trial,
                    seed,
                    success: false,
                    completion_steps: cfg.timeout_steps,
                    plan_satisfied: false,
                    recoveries: 0,
                    objective: f64::NAN,
                });
                out.push(rec);
            }
        }
    }
    out.sort_by_key(TrialRecord::cell);
    Ok(out)
}

pub fn write_records<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<TrialRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

/// Summary of one (group, task) cell. Times are percentages of the
/// longest recorded time of the task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub pp: u8,
    pub pm: u8,
    pub task: u8,
    pub trials: usize,
    pub success_mean: f64,
    pub success_sd: f64,
    pub time_pct_mean: f64,
    pub time_pct_sd: f64,
    pub plan_satisfaction: f64,
    pub mean_objective: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, variance(xs).sqrt())
}

pub fn summarize(records: &[TrialRecord]) -> Result<Vec<CellSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut longest: BTreeMap<u8, u64> = BTreeMap::new();
    let mut cells: BTreeMap<(u8, u8, u8), Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        let l = longest.entry(r.task).or_default();
        *l = (*l).max(r.completion_steps);
        cells.entry((r.pp, r.pm, r.task)).or_default().push(r);
    }
    Ok(cells
        .into_iter()
        .map(|((pp, pm, task), rs)| {
            let success: Vec<f64> = rs.iter().map(|r| if r.success { 100.0 } else { 0.0 }).collect();
            let top = longest[&task].max(1) as f64;
            let times: Vec<f64> = rs.iter().map(|r| 100.0 * r.completion_steps as f64 / top).collect();
            let (success_mean, success_sd) = mean_sd(&success);
            let (time_pct_mean, time_pct_sd) = mean_sd(&times);
            CellSummary {
                pp,
                pm,
                task,
                trials: rs.len(),
                success_mean,
                success_sd,
                time_pct_mean,
                time_pct_sd,
                plan_satisfaction: 100.0 * rs.iter().filter(|r| r.plan_satisfied).count() as f64 / rs.len() as f64,
                mean_objective: rs.iter().map(|r| r.objective).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect())
}

/// Aligned text table of `summary`.
pub fn summary_table(summary: &[CellSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:>2} {:>2} {:>4} {:>6}  {:>15}  {:>15}  {:>8}  {:>9}", "PP", "PM", "task", "trials", "success %", "time %", "plan %", "objective");
    for c in summary {
        let _ = writeln!(
            s,
            "{:>2} {:>2} {:>4} {:>6}  {:>15}  {:>15}  {:>8.1}  {:>9.3}",
            c.pp,
            c.pm,
            c.task,
            c.trials,
            format!("{:.1} ± {:.1}", c.success_mean, c.success_sd),
            format!("{:.1} ± {:.1}", c.time_pct_mean, c.time_pct_sd),
            c.plan_satisfaction,
            c.mean_objective
        );
    }
    s
}

/// Write `summary.csv` and `summary.txt` into `out`.
pub fn report(records: &[TrialRecord], out: &Path) -> Result<Vec<CellSummary>> {
    let summary = summarize(records)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io(e.to_string()))?;
    let file = std::fs::File::create(out.join("summary.csv")).map_err(|e| Error::Io(e.to_string()))?;
    let mut wr = csv::Writer::from_writer(file);
    for c in &summary {
        wr.serialize(c).map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(out.join("summary.txt"), summary_table(&summary)).map_err(|e| Error::Io(e.to_string()))?;
    Ok(summary)
}

/// Path of a passer-by walking across the camera view behind the operator,
/// inside the detection range.
pub fn case_study_bounds() -> Aabb {
    Aabb {
        min: Point3::new(1.55, -1.2, 0.0),
        max: Point3::new(1.75, 1.2, 0.0),
    }
}

/// Steps simulated by the detection case study.
pub const CASE_STUDY_STEPS: usize = 900;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviationRow {
    pub step: usize,
    pub deviation: f64,
    pub pipeline: String,
}

/// Per-pipeline deviation from the true operator pose with one passer-by,
/// plus the hierarchical pipeline without one (`single-person`) and the
/// ground truth itself.
pub fn detection_case_study(scenario: &Arc<Scenario>, seed: u64) -> Result<Vec<DeviationRow>> {
    let opts = |n| EpisodeOptions {
        autopilot: true,
        distractors: Some(n),
        distractor_bounds: Some(case_study_bounds()),
        ..Default::default()
    };
    let two = record_episode(scenario, seed, opts(1), CASE_STUDY_STEPS)?;
    let one = record_episode(scenario, seed, opts(0), CASE_STUDY_STEPS)?;
    let mut rows = Vec::new();
    let mut push = |name: String, detected: &[crate::envsim::Pose], truth: &[crate::envsim::Pose]| -> Result<()> {
        let (series, _) = keypoint_deviation(detected, truth)?;
        rows.extend(series.into_iter().enumerate().map(|(step, deviation)| DeviationRow {
            step,
            deviation,
            pipeline: name.clone(),
        }));
        Ok(())
    };
    let truth = two.true_poses();
    push("ground-truth".into(), &truth, &truth)?;
    for p in [Pipeline::Naive, Pipeline::Filtered(crate::detection::FilterKind::Median), Pipeline::Filtered(crate::detection::FilterKind::Wiener), Pipeline::Filtered(crate::detection::FilterKind::Kalman), Pipeline::Filtered(crate::detection::FilterKind::Ema), Pipeline::Hierarchical] {
        push(p.name(), &extract_stream(scenario, &two, p)?, &truth)?;
    }
    push("single-person".into(), &extract_stream(scenario, &one, Pipeline::Hierarchical)?, &one.true_poses())?;
    Ok(rows)
}

/// Deviation variance per pipeline.
pub fn deviation_variances(rows: &[DeviationRow]) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by.entry(r.pipeline.clone()).or_default().push(r.deviation);
    }
    by.into_iter().map(|(k, v)| (k, variance(&v))).collect()
}

pub fn write_deviation_rows<W: Write>(rows: &[DeviationRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(task: u8, success: bool, steps: u64) -> TrialRecord {
        TrialRecord {
            pp: 1,
            pm: 2,
            task,
            trial: 0,
            seed: 0,
            success,
            completion_steps: steps,
            plan_satisfied: success,
            recoveries: 0,
            objective: 1.0,
        }
    }

    #[test]
    fn seeds_differ_per_cell() {
        let a = trial_seed(0, Group { pp: 1, pm: 2 }, Task::Task1, 0);
        assert_eq!(a, trial_seed(0, Group { pp: 1, pm: 2 }, Task::Task1, 0));
        assert_ne!(a, trial_seed(0, Group { pp: 1, pm: 2 }, Task::Task1, 1));
        assert_ne!(a, trial_seed(0, Group { pp: 1, pm: 1 }, Task::Task1, 0));
        assert_ne!(a, trial_seed(1, Group { pp: 1, pm: 2 }, Task::Task1, 0));
    }

    #[test]
    fn tasks_partition_the_toycar() {
        let s = Scenario::toycar();
        let ids = |t: Task| t.nodes(&s.graph).into_iter().map(|n| n.0).collect::<Vec<_>>();
        assert_eq!(ids(Task::Task1), [1, 2]);
        assert_eq!(ids(Task::Task2), [3, 4, 5, 6]);
        assert_eq!(ids(Task::Task3), [7]);
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let zero = ExperimentConfig {
            trials_per_cell: 0,
            ..Default::default()
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
        let none = ExperimentConfig {
            groups: vec![],
            ..Default::default()
        };
        assert!(matches!(none.validate(), Err(Error::Config(_))));
        assert!(Group::new(2, 0).is_err());
    }

    #[test]
    fn config_from_toml() {
        let base = Path::new("/tmp/study");
        let cfg = ExperimentConfig::from_toml("trials_per_cell = 3\ntasks = [2]\nmodel = \"m.ckpt\"\ngroups = [{ pp = 1, pm = 2 }]\n", base).unwrap();
        assert_eq!(cfg.trials_per_cell, 3);
        assert_eq!(cfg.tasks, [Task::Task2]);
        assert_eq!(cfg.groups, [Group { pp: 1, pm: 2 }]);
        assert_eq!(cfg.model.as_deref(), Some(Path::new("/tmp/study/m.ckpt")));
        assert_eq!(cfg.seed, 0);
        assert!(matches!(ExperimentConfig::from_toml("trials = 3", base), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("tasks = [4]", base), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("trials_per_cell = 0", base), Err(Error::Config(_))));
    }

    #[test]
    fn summary_conventions() {
        assert_eq!(summarize(&[]), Err(Error::EmptyRecords));
        let recs = [record(1, true, 100), record(1, true, 50), record(2, true, 10)];
        let s = summarize(&recs).unwrap();
        assert_eq!(s[0].success_mean, 100.0);
        assert_eq!(s[0].success_sd, 0.0);
        assert_eq!(s[0].time_pct_mean, 75.0);
        assert_eq!(s[1].time_pct_mean, 100.0);
        assert!(summary_table(&s).contains("100.0 ± 0.0"));
    }

    #[test]
    fn records_round_trip_through_csv() {
        let recs = vec![record(1, true, 100), record(3, false, 3600)];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("pp,pm,task,trial,seed,success,completion_steps,plan_satisfied,recoveries,objective\n"));
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
    }
}
