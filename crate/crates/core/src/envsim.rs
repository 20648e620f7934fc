//! Seeded workcell simulation at 30 steps per second.
//!
//! The operator works through a queue of [`Activity`] items (fetching from a
//! bin, working at the station, waiting for the robot). Distractors wander
//! inside their bounds. Each step yields an [`ObservationFrame`] of noisy
//! 15-point poses for every person inside the camera's field of view, plus
//! any recognized speech.
//!
//! Every person draws from an independent random stream, so adding or
//! removing distractors never changes the operator's observations.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::controller::RobotState;
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::planner::{ActionLabel, SpeechEvent, SpeechToken};
use crate::scenario::{HiddenPlan, OperatorProfile, Scenario};
use crate::taskgraph::{Agent, NodeId, VertexKey};

pub const KEYPOINTS: usize = 15;
/// Index of the working hand in a pose.
pub const HAND: usize = 0;
const ELBOW: usize = 1;
const SHOULDER: usize = 2;

pub type Pose = [Point3; KEYPOINTS];
pub type PersonId = u32;

/// Offsets from the body root for a person facing -x. Hand and elbow rows
/// are placeholders; they are computed from the arm pose.
const BODY: [[f64; 3]; KEYPOINTS] = [
    [-0.23, -0.08, 0.16],
    [-0.12, -0.16, 0.22],
    [-0.05, -0.19, 0.35],
    [-0.05, 0.19, 0.35],
    [-0.10, 0.24, 0.12],
    [-0.25, 0.12, 0.15],
    [-0.04, 0.0, 0.42],
    [-0.12, 0.0, 0.55],
    [-0.10, -0.03, 0.58],
    [-0.10, 0.03, 0.58],
    [-0.04, -0.07, 0.56],
    [-0.04, 0.07, 0.56],
    [-0.11, -0.025, 0.50],
    [-0.11, 0.025, 0.50],
    [0.0, 0.0, 0.15],
];

fn body(i: usize) -> Point3 {
    Point3::from(BODY[i])
}

/// Full pose for a body root and working-hand position.
pub fn pose_from(root: Point3, hand: Point3) -> Pose {
    let mut p = [Point3::ORIGIN; KEYPOINTS];
    for (i, k) in p.iter_mut().enumerate() {
        *k = root + body(i);
    }
    p[HAND] = hand;
    p[ELBOW] = p[SHOULDER].lerp(hand, 0.5) + Point3::new(0.0, 0.0, -0.08);
    p
}

pub fn flatten(pose: &Pose) -> [f64; KEYPOINTS * 3] {
    let mut out = [0.0; KEYPOINTS * 3];
    for (i, k) in pose.iter().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(&k.to_array());
    }
    out
}

pub fn unflatten(v: &[f64]) -> Pose {
    let mut p = [Point3::ORIGIN; KEYPOINTS];
    for (i, k) in p.iter_mut().enumerate() {
        *k = Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Operator,
    Distractor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivityKind {
    /// Reach into the bin for the label, dwell, return to rest.
    Fetch(ActionLabel),
    /// Hands busy at the station for the given number of steps.
    Work(u32),
    /// Hands at rest for the given number of steps.
    Wait(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activity {
    pub kind: ActivityKind,
    pub vertex: Option<VertexKey>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MotionPhase {
    Rest,
    Reach {
        label: ActionLabel,
        from: Point3,
        to: Point3,
        step: u32,
        total: u32,
    },
    Dwell {
        label: ActionLabel,
        remaining: u32,
    },
    Return {
        label: ActionLabel,
        from: Point3,
        step: u32,
        total: u32,
    },
    Work {
        remaining: u32,
        elapsed: u32,
    },
    Wait {
        remaining: u32,
    },
}

impl MotionPhase {
    pub fn label(&self) -> ActionLabel {
        match *self {
            MotionPhase::Reach { label, .. } | MotionPhase::Dwell { label, .. } | MotionPhase::Return { label, .. } => {
                label
            }
            _ => ActionLabel::NoAction,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumanAgent {
    pub id: PersonId,
    pub role: Role,
    pub root: Point3,
    pub rest_hand: Point3,
    pub reach_steps: u32,
    pub dwell_steps: u32,
    /// Steps per hand cycle while working.
    pub work_period: f64,
    /// Noiseless pose.
    pub keypoints: Pose,
    pub phase: MotionPhase,
    pub current: Option<Activity>,
    pub queue: VecDeque<Activity>,
    pub completed: Vec<VertexKey>,
    pub hidden_plan: Option<HiddenPlan>,
    pub speech_script: Vec<(u64, SpeechToken)>,
    score_range: (f64, f64),
    heading: f64,
    speed: f64,
    rng: ChaCha8Rng,
}

impl HumanAgent {
    pub fn hand(&self) -> Point3 {
        self.keypoints[HAND]
    }

    /// True while an activity is in progress or queued.
    pub fn is_busy(&self) -> bool {
        self.current.is_some() || !self.queue.is_empty()
    }

    pub fn label(&self) -> ActionLabel {
        self.phase.label()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonObservation {
    pub person: PersonId,
    pub keypoints: Pose,
    pub distance: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub t: u64,
    pub persons: Vec<PersonObservation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub keypoints: Pose,
    pub label: ActionLabel,
    /// Vertex currently being executed, else the next queued one.
    pub position: Option<VertexKey>,
}

impl GroundTruth {
    pub fn node(&self) -> Option<NodeId> {
        self.position.as_ref().map(|k| k.node)
    }
}

/// Per-episode overrides of the scenario defaults.
#[derive(Debug, Clone, Default)]
pub struct EpisodeOptions {
    pub profile: Option<OperatorProfile>,
    /// Hidden plan id; defaults to the scenario's operator plan.
    pub plan: Option<String>,
    /// Run the hidden plan automatically, treating robot work as waits.
    pub autopilot: bool,
    pub distractors: Option<usize>,
    pub distractor_bounds: Option<Aabb>,
    /// Restrict the autopilot to these nodes of the plan route.
    pub nodes: Option<Vec<NodeId>>,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub clock: u64,
    pub scenario: Arc<Scenario>,
    pub humans: Vec<HumanAgent>,
    pub robot: RobotState,
    pub terminated: bool,
    distractor_bounds: Aabb,
    utterances: VecDeque<(u64, SpeechToken)>,
    speech_rng: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const SPEECH_STREAM: u64 = 1 << 32;

/// Activities for an operator executing `plan` on `nodes`.
pub fn plan_activities(scenario: &Scenario, plan: &HiddenPlan, nodes: Option<&[NodeId]>, work_scale: f64) -> Vec<Activity> {
    let mut out = Vec::new();
    for node in plan.route.nodes() {
        if nodes.is_some_and(|ns| !ns.contains(node)) {
            continue;
        }
        let tpg = &scenario.graph.nodes[node].subtask;
        let mut covered = Vec::new();
        for v in &plan.order[node] {
            let vx = &tpg.vertices[v];
            let key = VertexKey::new(*node, v.clone());
            if covered.contains(v) {
                continue;
            }
            covered.extend(tpg.collaborative_partners(v).cloned());
            let kind = match (vx.agent, ActionLabel::parse(&vx.label)) {
                (Agent::Human, Some(l)) if l != ActionLabel::NoAction => ActivityKind::Fetch(l),
                (Agent::Human, _) => ActivityKind::Work(((vx.duration_steps as f64) * work_scale).round().max(1.0) as u32),
                (Agent::Robot, _) => ActivityKind::Wait(
                    scenario
                        .primitive_map
                        .get(&key)
                        .map_or(vx.duration_steps, |p| p.duration)
                        .max(1),
                ),
            };
            out.push(Activity { kind, vertex: Some(key) });
        }
    }
    out
}

/// Reproducible initial state for the scenario's default operator.
pub fn init_episode(scenario: &Scenario, seed: u64) -> Result<EnvState> {
    EnvState::new(
        Arc::new(scenario.clone()),
        seed,
        EpisodeOptions {
            autopilot: true,
            ..Default::default()
        },
    )
}

impl EnvState {
    pub fn new(scenario: Arc<Scenario>, seed: u64, opts: EpisodeOptions) -> Result<Self> {
        let s = &*scenario;
        let op = &s.operator;
        let plan_id = opts.plan.clone().unwrap_or_else(|| op.plan.clone());
        let plan = s.plan(&plan_id)?.clone();
        let (offset, reach, work_scale) = match &opts.profile {
            Some(p) => (p.offset, p.reach_steps, p.work_scale),
            None => (Point3::ORIGIN, op.reach_steps, 1.0),
        };
        let root = op.station + offset;
        let rest = op.rest_hand + offset;
        let queue: VecDeque<Activity> = if opts.autopilot {
            plan_activities(s, &plan, opts.nodes.as_deref(), work_scale).into()
        } else {
            VecDeque::new()
        };
        let mut humans = vec![HumanAgent {
            id: 0,
            role: Role::Operator,
            root,
            rest_hand: rest,
            reach_steps: reach,
            dwell_steps: op.dwell_steps,
            work_period: WORK_PERIOD_STEPS * work_scale,
            keypoints: pose_from(root, rest),
            phase: MotionPhase::Rest,
            current: None,
            queue,
            completed: Vec::new(),
            hidden_plan: Some(plan),
            speech_script: op.speech_script.clone(),
            score_range: op.score_range,
            heading: 0.0,
            speed: 0.0,
            rng: stream(seed, 0),
        }];
        let d = &s.distractors;
        let bounds = opts.distractor_bounds.unwrap_or(d.bounds);
        for i in 0..opts.distractors.unwrap_or(d.count) {
            let id = i as PersonId + 1;
            let mut rng = stream(seed, id as u64);
            let root = Point3::new(
                rng.random_range(bounds.min.x..=bounds.max.x),
                rng.random_range(bounds.min.y..=bounds.max.y),
                0.0,
            );
            let heading = if rng.random::<bool>() { PI / 2.0 } else { -PI / 2.0 };
            humans.push(HumanAgent {
                id,
                role: Role::Distractor,
                root,
                rest_hand: root + body(HAND),
                reach_steps: 1,
                dwell_steps: 0,
                work_period: WORK_PERIOD_STEPS,
                keypoints: pose_from(root, root + body(HAND)),
                phase: MotionPhase::Rest,
                current: None,
                queue: VecDeque::new(),
                completed: Vec::new(),
                hidden_plan: None,
                speech_script: Vec::new(),
                score_range: d.score_range,
                heading,
                speed: d.speed,
                rng,
            });
        }
        let utterances = op.speech_script.iter().copied().collect();
        Ok(EnvState {
            clock: 0,
            robot: RobotState::at_home(s.robot_home()),
            humans,
            terminated: false,
            distractor_bounds: bounds,
            utterances,
            speech_rng: stream(seed, SPEECH_STREAM),
            scenario,
        })
    }

    pub fn operator(&self) -> &HumanAgent {
        &self.humans[0]
    }

    /// Queue an activity for the operator.
    pub fn enqueue(&mut self, activity: Activity) {
        self.humans[0].queue.push_back(activity);
    }

    /// Schedule an utterance; it is recognized after the speech latency.
    pub fn say(&mut self, token: SpeechToken) {
        let due = self.clock + self.scenario.speech.latency_steps;
        self.utterances.push_back((due, token));
    }

    pub fn pending_utterances(&self) -> usize {
        self.utterances.len()
    }

    pub fn terminate(&mut self) {
        self.terminated = true;
    }

    /// Value-semantics step.
    pub fn step(&self) -> Result<(EnvState, ObservationFrame, Option<SpeechEvent>)> {
        let mut next = self.clone();
        let (obs, speech) = next.step_mut()?;
        Ok((next, obs, speech))
    }

    /// Advance one step in place.
    pub fn step_mut(&mut self) -> Result<(ObservationFrame, Option<SpeechEvent>)> {
        if self.terminated {
            return Err(Error::EpisodeTerminated);
        }
        self.clock += 1;
        let s = Arc::clone(&self.scenario);
        let jitter = Normal::new(0.0, s.operator.jitter).map_err(|e| Error::Config(e.to_string()))?;
        let half_fov = s.camera.fov_deg.to_radians() / 2.0;
        let bounds = self.distractor_bounds;
        let mut persons = Vec::new();
        for h in &mut self.humans {
            match h.role {
                Role::Operator => advance_operator(h, &s),
                Role::Distractor => advance_distractor(h, &bounds),
            }
            let mut noisy = h.keypoints;
            for k in noisy.iter_mut() {
                *k = *k + Point3::new(jitter.sample(&mut h.rng), jitter.sample(&mut h.rng), jitter.sample(&mut h.rng));
            }
            let (lo, hi) = h.score_range;
            let score = if hi > lo { h.rng.random_range(lo..hi) } else { lo };
            let dn: f64 = h.rng.sample(StandardNormal);
            let distance = (h.root.planar_norm() + s.camera.distance_noise * dn).max(0.0);
            let bearing = h.root.y.atan2(h.root.x);
            if h.root.x > 0.0 && bearing.abs() <= half_fov {
                persons.push(PersonObservation {
                    person: h.id,
                    keypoints: noisy,
                    distance,
                    score,
                });
            }
        }
        let speech = self.recognize_speech();
        Ok((ObservationFrame { t: self.clock, persons }, speech))
    }

    fn recognize_speech(&mut self) -> Option<SpeechEvent> {
        let due = self.utterances.front().is_some_and(|(t, _)| *t <= self.clock);
        if !due {
            return None;
        }
        let (_, token) = self.utterances.pop_front()?;
        let m = &self.scenario.speech;
        let miss: f64 = self.speech_rng.random();
        let confuse: f64 = self.speech_rng.random();
        if miss < m.miss {
            return None;
        }
        let (token, confidence) = match confusable(token) {
            Some(other) if confuse < m.confusion => (other, m.confused_confidence),
            _ => (token, m.confidence),
        };
        Some(SpeechEvent {
            token,
            confidence,
            t: self.clock,
        })
    }
}

/// Command most easily mistaken for `t`; `stop` has none.
pub fn confusable(t: SpeechToken) -> Option<SpeechToken> {
    match t {
        SpeechToken::Short => Some(SpeechToken::Long),
        SpeechToken::Long => Some(SpeechToken::Short),
        SpeechToken::Spin => Some(SpeechToken::Lift),
        SpeechToken::Lift => Some(SpeechToken::Spin),
        SpeechToken::Stop => None,
    }
}

/// Minimum-jerk position fraction at normalized time `tau` in `[0, 1]`.
pub fn min_jerk(tau: f64) -> f64 {
    let t = tau.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

/// Steps per hand cycle of manual work at unit work scale.
pub const WORK_PERIOD_STEPS: f64 = 24.0;

fn start_activity(h: &mut HumanAgent, s: &Scenario) {
    while h.current.is_none() {
        let Some(a) = h.queue.pop_front() else {
            h.phase = MotionPhase::Rest;
            return;
        };
        h.phase = match a.kind {
            ActivityKind::Fetch(label) => match s.bin_for(label) {
                Some(bin) => MotionPhase::Reach {
                    label,
                    from: h.hand(),
                    to: bin,
                    step: 0,
                    total: h.reach_steps,
                },
                None => MotionPhase::Rest,
            },
            ActivityKind::Work(n) => MotionPhase::Work { remaining: n, elapsed: 0 },
            ActivityKind::Wait(n) => MotionPhase::Wait { remaining: n },
        };
        h.current = Some(a);
    }
}

fn finish_activity(h: &mut HumanAgent) {
    if let Some(a) = h.current.take() {
        if let Some(v) = a.vertex {
            h.completed.push(v);
        }
    }
    h.phase = MotionPhase::Rest;
}

fn advance_operator(h: &mut HumanAgent, s: &Scenario) {
    if h.current.is_none() {
        start_activity(h, s);
    }
    let mut hand = h.hand();
    match &mut h.phase {
        MotionPhase::Rest => {
            hand = h.rest_hand;
        }
        MotionPhase::Reach { label, from, to, step, total } => {
            *step += 1;
            hand = from.lerp(*to, min_jerk(*step as f64 / *total as f64));
            if *step >= *total {
                h.phase = MotionPhase::Dwell {
                    label: *label,
                    remaining: h.dwell_steps,
                };
            }
        }
        MotionPhase::Dwell { label, remaining } => {
            if *remaining <= 1 {
                h.phase = MotionPhase::Return {
                    label: *label,
                    from: hand,
                    step: 0,
                    total: h.reach_steps,
                };
            } else {
                *remaining -= 1;
            }
        }
        MotionPhase::Return { from, step, total, .. } => {
            *step += 1;
            hand = from.lerp(h.rest_hand, min_jerk(*step as f64 / *total as f64));
            if *step >= *total {
                finish_activity(h);
            }
        }
        MotionPhase::Work { remaining, elapsed } => {
            *elapsed += 1;
            let phase = 2.0 * PI * *elapsed as f64 / h.work_period;
            hand = h.rest_hand + Point3::new(0.02 * phase.sin(), 0.015 * phase.cos(), 0.01 * (2.0 * phase).sin());
            *remaining = remaining.saturating_sub(1);
            if *remaining == 0 {
                finish_activity(h);
            }
        }
        MotionPhase::Wait { remaining } => {
            hand = h.rest_hand;
            *remaining = remaining.saturating_sub(1);
            if *remaining == 0 {
                finish_activity(h);
            }
        }
    }
    h.keypoints = pose_from(h.root, hand);
}

fn advance_distractor(h: &mut HumanAgent, bounds: &Aabb) {
    let turn: f64 = h.rng.sample(StandardNormal);
    h.heading += 0.15 * turn;
    let mut p = h.root + Point3::new(h.speed * h.heading.cos(), h.speed * h.heading.sin(), 0.0);
    if p.x < bounds.min.x || p.x > bounds.max.x {
        p.x = if p.x < bounds.min.x { 2.0 * bounds.min.x - p.x } else { 2.0 * bounds.max.x - p.x };
        h.heading = PI - h.heading;
    }
    if p.y < bounds.min.y || p.y > bounds.max.y {
        p.y = if p.y < bounds.min.y { 2.0 * bounds.min.y - p.y } else { 2.0 * bounds.max.y - p.y };
        h.heading = -h.heading;
    }
    h.root = Point3::new(p.x.clamp(bounds.min.x, bounds.max.x), p.y.clamp(bounds.min.y, bounds.max.y), p.z);
    let swing = 0.03 * (h.heading * 7.0).sin();
    h.rest_hand = h.root + body(HAND) + Point3::new(swing, 0.0, 0.0);
    h.keypoints = pose_from(h.root, h.rest_hand);
}

/// Noiseless operator pose, its action label and plan position.
pub fn ground_truth(state: &EnvState) -> GroundTruth {
    let op = state.operator();
    GroundTruth {
        keypoints: op.keypoints,
        label: op.label(),
        position: op
            .current
            .as_ref()
            .and_then(|a| a.vertex.clone())
            .or_else(|| op.queue.iter().find_map(|a| a.vertex.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toycar() -> Scenario {
        Scenario::toycar()
    }

    fn run(state: &mut EnvState, n: usize) -> Vec<(ObservationFrame, Option<SpeechEvent>)> {
        (0..n).map(|_| state.step_mut().unwrap()).collect()
    }

    #[test]
    fn init_places_operator_and_objects() {
        let s = toycar();
        let e = init_episode(&s, 42).unwrap();
        assert_eq!(e.humans.iter().filter(|h| h.role == Role::Operator).count(), 1);
        assert_eq!(e.operator().root, s.operator.station);
        assert_eq!(e.scenario.objects.len(), 5);
        let other = init_episode(&s, 43).unwrap();
        assert_eq!(e.scenario.objects, other.scenario.objects);
    }

    #[test]
    fn zero_distractors_leaves_only_the_operator() {
        let e = EnvState::new(
            Arc::new(toycar()),
            1,
            EpisodeOptions {
                distractors: Some(0),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(e.humans.len(), 1);
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let s = toycar();
        let mut a = init_episode(&s, 9).unwrap();
        let mut b = init_episode(&s, 9).unwrap();
        assert_eq!(run(&mut a, 300), run(&mut b, 300));
        let mut c = init_episode(&s, 10).unwrap();
        assert_ne!(run(&mut a, 5), run(&mut c, 5));
    }

    #[test]
    fn reach_moves_hand_along_straight_segment() {
        let s = toycar();
        let mut e = EnvState::new(Arc::new(s.clone()), 0, EpisodeOptions::default()).unwrap();
        e.enqueue(Activity {
            kind: ActivityKind::Fetch(ActionLabel::GetConnectors),
            vertex: None,
        });
        let start = e.operator().hand();
        let bin = s.object("connectors").unwrap();
        let mut noisy_err = 0.0;
        for k in 1..=s.operator.reach_steps {
            let (obs, _) = e.step_mut().unwrap();
            let expect = start.lerp(bin, min_jerk(k as f64 / s.operator.reach_steps as f64));
            assert!(e.operator().hand().distance(expect) < 1e-12);
            assert_eq!(ground_truth(&e).label, ActionLabel::GetConnectors);
            noisy_err += obs.persons[0].keypoints[HAND].distance(expect);
        }
        let mean = noisy_err / s.operator.reach_steps as f64;
        assert!(mean > 0.0 && mean < 6.0 * s.operator.jitter);
    }

    #[test]
    fn scripted_speech_fires_on_time() {
        let text = crate::scenario::TOYCAR_SCENARIO.replace("speech_script = []", "speech_script = [[120, \"long\"]]");
        let s = Scenario::from_strs(crate::scenario::TOYCAR_GRAPH, &text).unwrap();
        let mut e = init_episode(&s, 5).unwrap();
        let events = run(&mut e, 130);
        let fired: Vec<(usize, SpeechEvent)> = events
            .into_iter()
            .enumerate()
            .filter_map(|(i, (_, sp))| sp.map(|x| (i + 1, x)))
            .collect();
        assert_eq!(fired.len(), 1);
        assert_eq!(fired[0].0, 120);
        assert_eq!(fired[0].1.token, SpeechToken::Long);
        assert_eq!(fired[0].1.confidence, s.speech.confidence);
    }

    #[test]
    fn distractors_stay_in_bounds() {
        let s = toycar();
        let mut e = init_episode(&s, 3).unwrap();
        let b = s.distractors.bounds;
        for _ in 0..3000 {
            e.step_mut().unwrap();
            let d = &e.humans[1];
            assert!(d.root.x >= b.min.x && d.root.x <= b.max.x && d.root.y >= b.min.y && d.root.y <= b.max.y);
        }
    }

    #[test]
    fn autopilot_follows_the_plan() {
        let s = toycar();
        let mut e = init_episode(&s, 2).unwrap();
        assert_eq!(ground_truth(&e).label, ActionLabel::NoAction);
        assert_eq!(ground_truth(&e).node(), Some(NodeId(1)));
        let mut saw_screws = false;
        while e.operator().completed.len() < s.graph.nodes[&NodeId(1)].subtask.vertices.len() {
            e.step_mut().unwrap();
            if ground_truth(&e).label == ActionLabel::GetScrews {
                saw_screws = true;
            }
        }
        assert!(!saw_screws);
        assert_eq!(ground_truth(&e).node(), Some(NodeId(2)));
        while ground_truth(&e).label != ActionLabel::GetScrews {
            e.step_mut().unwrap();
        }
        let bin = s.object("screws").unwrap();
        assert!(e.operator().hand().distance(bin) < e.operator().rest_hand.distance(bin));
    }

    #[test]
    fn terminated_episode_refuses_to_step() {
        let mut e = init_episode(&toycar(), 0).unwrap();
        e.terminate();
        assert!(matches!(e.step(), Err(Error::EpisodeTerminated)));
    }

    #[test]
    fn jitter_has_configured_spread() {
        let s = toycar();
        let mut e = EnvState::new(Arc::new(s.clone()), 11, EpisodeOptions::default()).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut n = 0.0;
        for _ in 0..10_000 {
            let (obs, _) = e.step_mut().unwrap();
            let truth = e.operator().keypoints;
            for (a, b) in obs.persons[0].keypoints.iter().zip(&truth) {
                for d in (*a - *b).to_array() {
                    sum += d;
                    sq += d * d;
                    n += 1.0;
                }
            }
        }
        let mean = sum / n;
        let sd = (sq / n - mean * mean).sqrt();
        assert!((sd - s.operator.jitter).abs() < 0.05 * s.operator.jitter, "sd {sd}");
    }

    #[test]
    fn distractors_do_not_touch_the_operator() {
        let s = Arc::new(toycar());
        let opts = |n| EpisodeOptions {
            autopilot: true,
            distractors: Some(n),
            ..Default::default()
        };
        let mut with = EnvState::new(Arc::clone(&s), 4, opts(3)).unwrap();
        let mut without = EnvState::new(s, 4, opts(0)).unwrap();
        for _ in 0..2000 {
            let (a, _) = with.step_mut().unwrap();
            let (b, _) = without.step_mut().unwrap();
            assert_eq!(a.persons.iter().find(|p| p.person == 0), b.persons.first());
        }
    }
}
