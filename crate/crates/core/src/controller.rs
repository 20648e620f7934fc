//! Robot motion primitives, the fixed-rate control tick and the objective
//! account `J + lambda * T`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::planner::{FusedAction, PlanPrediction};
use crate::taskgraph::{Agent, ProgressTrace, TaskGraph, VertexKey};

/// Control loop rate, also the simulation rate.
pub const STEPS_PER_SECOND: f64 = 30.0;

/// Tracking cost charged per rejected primitive.
pub const RECOVERY_COST: f64 = 1.0;
/// Tracking cost charged per step of off-plan motion.
pub const OFF_PLAN_STEP_COST: f64 = 0.01;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const RETURN_STEPS: u32 = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PrimitiveKind {
    DeliverShortTube,
    DeliverLongTube,
    SpinBase,
    LiftBody,
    Hold,
    Idle,
    /// Undo a rejected primitive and return home.
    ReturnObject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub kind: PrimitiveKind,
    pub target: Point3,
    pub duration_steps: u32,
    pub interruptible: bool,
    /// Vertex this primitive serves, if any.
    pub vertex: Option<VertexKey>,
}

impl MotionPrimitive {
    pub fn idle(at: Point3) -> Self {
        MotionPrimitive {
            kind: PrimitiveKind::Idle,
            target: at,
            duration_steps: 1,
            interruptible: true,
            vertex: None,
        }
    }

    pub fn hold(at: Point3) -> Self {
        MotionPrimitive {
            kind: PrimitiveKind::Hold,
            ..Self::idle(at)
        }
    }

    pub fn is_motion(&self) -> bool {
        !matches!(self.kind, PrimitiveKind::Hold | PrimitiveKind::Idle)
    }
}

/// Scenario entry: which primitive serves a vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    pub target: String,
    pub duration: u32,
}

pub type PrimitiveMap = BTreeMap<VertexKey, PrimitiveSpec>;

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub effector: Point3,
    pub home: Point3,
    /// Active primitive and the number of steps already executed.
    pub active: Option<(MotionPrimitive, u32)>,
    pub queue: VecDeque<MotionPrimitive>,
    segment_start: Point3,
}

impl RobotState {
    pub fn at_home(home: Point3) -> Self {
        RobotState {
            effector: home,
            home,
            active: None,
            queue: VecDeque::new(),
            segment_start: home,
        }
    }

    pub fn active_primitive(&self) -> Option<&MotionPrimitive> {
        self.active.as_ref().map(|(p, _)| p)
    }

    /// True when neither a motion primitive nor queued work is pending.
    pub fn is_idle(&self) -> bool {
        self.active_primitive().is_none_or(|p| !p.is_motion())
            && self.queue.iter().all(|p| !p.is_motion())
    }

    /// Replace the current plan. An interruptible active primitive is
    /// dropped; a non-interruptible one finishes first.
    pub fn replan(&mut self, prims: Vec<MotionPrimitive>) {
        if self.active_primitive().is_some_and(|p| p.interruptible) {
            self.active = None;
        }
        self.queue = prims.into();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveAccount {
    pub tracking_cost: f64,
    pub elapsed_steps: u64,
    pub lambda: f64,
    pub recovery_events: u32,
}

impl ObjectiveAccount {
    pub fn new(lambda: f64) -> Self {
        ObjectiveAccount {
            tracking_cost: 0.0,
            elapsed_steps: 0,
            lambda,
            recovery_events: 0,
        }
    }
}

impl Default for ObjectiveAccount {
    fn default() -> Self {
        Self::new(DEFAULT_LAMBDA)
    }
}

/// Verdict on a primitive that reached its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Judgement {
    Accept,
    Reject,
    /// Hold at the target and ask again next tick.
    Wait,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TickEvent {
    None,
    Started(MotionPrimitive),
    Completed(MotionPrimitive),
    Rejected(MotionPrimitive),
    Aborted(MotionPrimitive),
    Recovered,
}

/// Objective `J + lambda * T` with `T` in seconds.
pub fn objective_value(acct: &ObjectiveAccount) -> f64 {
    acct.tracking_cost + acct.lambda * acct.elapsed_steps as f64 / STEPS_PER_SECOND
}

/// Resolve a named location against object positions and robot points.
pub type Locations = BTreeMap<String, Point3>;

/// Primitive serving `plan.intent`; `Idle` when that vertex is already done.
pub fn plan_motion(
    plan: &PlanPrediction,
    robot: &RobotState,
    trace: &ProgressTrace,
    primitives: &PrimitiveMap,
    locations: &Locations,
) -> Result<Vec<MotionPrimitive>> {
    let key = VertexKey::new(plan.node, plan.intent.clone());
    if trace.contains(&key) {
        return Ok(vec![MotionPrimitive::idle(robot.effector)]);
    }
    let spec = primitives.get(&key).ok_or_else(|| Error::UnmappedVertex {
        node: plan.node,
        vertex: plan.intent.clone(),
    })?;
    let target = *locations.get(&spec.target).ok_or_else(|| {
        Error::Config(format!("primitive target {} is not a known location", spec.target))
    })?;
    Ok(vec![MotionPrimitive {
        kind: spec.kind,
        target,
        duration_steps: spec.duration.max(1),
        interruptible: true,
        vertex: Some(key),
    }])
}

/// Robot vertex a primitive completes: the mapped vertex itself, or the first
/// robot successor when it was mapped from a human vertex.
pub fn served_robot_vertex(graph: &TaskGraph, key: &VertexKey, kind: PrimitiveKind, primitives: &PrimitiveMap) -> Option<VertexKey> {
    let tpg = &graph.node(key.node).ok()?.subtask;
    let v = tpg.vertex(&key.vertex)?;
    if v.agent == Agent::Robot {
        return Some(key.clone());
    }
    tpg.vertices
        .values()
        .filter(|c| c.agent == Agent::Robot && tpg.reaches(&key.vertex, &c.id))
        .map(|c| VertexKey::new(key.node, c.id.clone()))
        .find(|k| primitives.get(k).is_some_and(|s| s.kind == kind))
}

/// One control step. `judge` is consulted when a motion primitive reaches
/// its target.
pub fn tick(
    robot: &RobotState,
    fused: Option<&FusedAction>,
    acct: &ObjectiveAccount,
    mut judge: impl FnMut(&MotionPrimitive) -> Judgement,
) -> (RobotState, ObjectiveAccount, TickEvent) {
    let mut r = robot.clone();
    let mut a = *acct;
    a.elapsed_steps += 1;

    if fused.is_some_and(FusedAction::is_stop) {
        if let Some((p, done)) = r.active.take() {
            if p.interruptible && p.is_motion() {
                a.tracking_cost += OFF_PLAN_STEP_COST * done as f64;
                r.queue.clear();
                r.segment_start = r.effector;
                r.active = Some((MotionPrimitive::hold(r.effector), 0));
                return (r, a, TickEvent::Aborted(p));
            }
            r.active = Some((p, done));
        }
        r.queue.retain(|p| !p.is_motion());
    }

    let mut event = TickEvent::None;
    if r.active.is_none() {
        match r.queue.pop_front() {
            Some(p) => {
                r.segment_start = r.effector;
                if p.is_motion() {
                    event = TickEvent::Started(p.clone());
                }
                r.active = Some((p, 0));
            }
            None => return (r, a, event),
        }
    }
    let (p, done) = r.active.take().expect("active primitive");
    let step = done + 1;
    let frac = step as f64 / p.duration_steps as f64;
    r.effector = r.segment_start.lerp(p.target, frac.min(1.0));
    if p.kind == PrimitiveKind::ReturnObject {
        a.tracking_cost += OFF_PLAN_STEP_COST;
    }
    if step < p.duration_steps {
        r.active = Some((p, step));
        return (r, a, event);
    }
    if !p.is_motion() {
        return (r, a, event);
    }
    if p.kind == PrimitiveKind::ReturnObject {
        return (r, a, TickEvent::Recovered);
    }
    match judge(&p) {
        Judgement::Accept => (r, a, TickEvent::Completed(p)),
        Judgement::Wait => {
            r.active = Some((p, step - 1));
            (r, a, event)
        }
        Judgement::Reject => {
            a.recovery_events += 1;
            a.tracking_cost += RECOVERY_COST + OFF_PLAN_STEP_COST * p.duration_steps as f64;
            r.queue.clear();
            r.segment_start = r.effector;
            r.active = Some((
                MotionPrimitive {
                    kind: PrimitiveKind::ReturnObject,
                    target: r.home,
                    duration_steps: RETURN_STEPS,
                    interruptible: false,
                    vertex: p.vertex.clone(),
                },
                0,
            ));
            (r, a, TickEvent::Rejected(p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{fuse_actions, ActionLabel, ActionPrediction, SpeechEvent, SpeechToken};
    use crate::scenario::Scenario;
    use crate::taskgraph::{Completion, NodeId};

    fn stop() -> FusedAction {
        fuse_actions(
            ActionPrediction::none(),
            Some(SpeechEvent {
                token: SpeechToken::Stop,
                confidence: 0.9,
                t: 0,
            }),
        )
    }

    fn plan(node: u32, v: &str) -> PlanPrediction {
        PlanPrediction {
            node: NodeId(node),
            next_vertex: v.into(),
            intent: v.into(),
            route: crate::taskgraph::RouteSequence::new([1, 2]),
            fallback: false,
            fused: fuse_actions(ActionPrediction::new(ActionLabel::GetConnectors, 0.9), None),
        }
    }

    fn delivery(s: &Scenario, v: &str) -> MotionPrimitive {
        let robot = RobotState::at_home(s.robot_home());
        plan_motion(&plan(1, v), &robot, &ProgressTrace::new(), &s.primitive_map, &s.locations())
            .unwrap()
            .remove(0)
    }

    #[test]
    fn plan_motion_examples() {
        let s = Scenario::toycar();
        assert_eq!(delivery(&s, "F").kind, PrimitiveKind::DeliverLongTube);
        let robot = RobotState::at_home(s.robot_home());
        let p = plan_motion(&plan(2, "C"), &robot, &ProgressTrace::new(), &s.primitive_map, &s.locations()).unwrap();
        assert_eq!(p[0].kind, PrimitiveKind::SpinBase);
        let trace = ProgressTrace::new()
            .advance(&s.graph, Completion::vertex(NodeId(1), "A", Agent::Human), 0)
            .unwrap();
        let p = plan_motion(&plan(1, "A"), &robot, &trace, &s.primitive_map, &s.locations()).unwrap();
        assert_eq!(p[0].kind, PrimitiveKind::Idle);
        assert!(matches!(
            plan_motion(&plan(1, "B"), &robot, &ProgressTrace::new(), &s.primitive_map, &s.locations()),
            Err(Error::UnmappedVertex { .. })
        ));
    }

    #[test]
    fn stop_aborts_within_one_tick() {
        let s = Scenario::toycar();
        let mut robot = RobotState::at_home(s.robot_home());
        robot.replan(vec![delivery(&s, "E")]);
        let mut acct = ObjectiveAccount::default();
        for _ in 0..10 {
            (robot, acct, _) = tick(&robot, None, &acct, |_| Judgement::Accept);
        }
        let (r, a, ev) = tick(&robot, Some(&stop()), &acct, |_| Judgement::Accept);
        assert!(matches!(ev, TickEvent::Aborted(p) if p.kind == PrimitiveKind::DeliverShortTube));
        assert_eq!(r.active_primitive().unwrap().kind, PrimitiveKind::Hold);
        assert_eq!(r.effector, robot.effector);
        assert_eq!(a.elapsed_steps, 11);
    }

    #[test]
    fn idle_tick_only_advances_clock() {
        let robot = RobotState::at_home(Point3::ORIGIN);
        let acct = ObjectiveAccount::default();
        let (r, a, ev) = tick(&robot, None, &acct, |_| Judgement::Accept);
        assert_eq!(r, robot);
        assert_eq!(a.elapsed_steps, 1);
        assert_eq!(a.tracking_cost, 0.0);
        assert_eq!(ev, TickEvent::None);
    }

    /// Deliver the short tube; when `reject_first`, the first delivery is
    /// refused and the long tube follows the recovery.
    fn run(s: &Scenario, reject_first: bool) -> ObjectiveAccount {
        let mut robot = RobotState::at_home(s.robot_home());
        robot.replan(vec![delivery(s, "E")]);
        let mut acct = ObjectiveAccount::default();
        let mut rejected = false;
        loop {
            let verdict = if reject_first && !rejected { Judgement::Reject } else { Judgement::Accept };
            let ev;
            (robot, acct, ev) = tick(&robot, None, &acct, |_| verdict);
            match ev {
                TickEvent::Rejected(_) => rejected = true,
                TickEvent::Recovered => robot.replan(vec![delivery(s, "F")]),
                TickEvent::Completed(_) => return acct,
                _ => {}
            }
        }
    }

    #[test]
    fn wrong_delivery_costs_a_recovery() {
        let s = Scenario::toycar();
        let good = run(&s, false);
        let bad = run(&s, true);
        assert_eq!(good.recovery_events, 0);
        assert_eq!(bad.recovery_events, 1);
        assert!(bad.elapsed_steps > good.elapsed_steps);
        assert!(objective_value(&bad) > objective_value(&good));
    }

    #[test]
    fn objective_examples() {
        assert_eq!(objective_value(&ObjectiveAccount::default()), 0.0);
        let a = ObjectiveAccount {
            tracking_cost: 2.5,
            elapsed_steps: 300,
            lambda: 0.0,
            recovery_events: 1,
        };
        assert_eq!(objective_value(&a), 2.5);
        assert!((objective_value(&ObjectiveAccount { lambda: 0.1, ..a }) - 3.5).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn motion_is_bounded_and_objective_monotone(
                script in proptest::collection::vec((0u8..4, any::<bool>()), 1..200),
            ) {
                let s = Scenario::toycar();
                let mut robot = RobotState::at_home(s.robot_home());
                let mut acct = ObjectiveAccount::default();
                let prims = [delivery(&s, "E"), delivery(&s, "F")];
                let mut last = objective_value(&acct);
                for (i, (action, stop_now)) in script.into_iter().enumerate() {
                    if action == 0 && robot.is_idle() {
                        robot.replan(vec![prims[i % 2].clone()]);
                    }
                    let before = robot.clone();
                    let verdict = if action == 1 { Judgement::Reject } else { Judgement::Accept };
                    let f = stop();
                    let (r, a, _) = tick(&robot, stop_now.then_some(&f), &acct, |_| verdict);
                    if let Some((p, _)) = &r.active {
                        let speed = r.segment_start.distance(p.target) / p.duration_steps as f64;
                        prop_assert!(before.effector.distance(r.effector) <= speed + 1e-9);
                    }
                    prop_assert_eq!(a.elapsed_steps, i as u64 + 1);
                    let v = objective_value(&a);
                    prop_assert!(v >= last);
                    last = v;
                    robot = r;
                    acct = a;
                }
            }
        }
    }
}
