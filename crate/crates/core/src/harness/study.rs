//! One simulated trial of the factorial study.
//!
//! The operator follows a hidden plan: it fetches and works on its own
//! vertices and waits for the robot's. It judges every finished robot
//! primitive: the next robot vertex of its plan is accepted (or kept
//! waiting until the operator is ready), anything else is rejected. With
//! speech enabled it announces requests, repeats unanswered ones and
//! interrupts wrong motions with `stop` followed by the right request.
//!
//! The robot keeps its own view of progress, built only from accepted
//! primitives and from what their acceptance implies.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controller::{objective_value, plan_motion, served_robot_vertex, tick, Judgement, MotionPrimitive, ObjectiveAccount, PrimitiveKind, TickEvent};
use crate::detection::{hierarchical_detect, SelectionMemory, DEFAULT_RANGE_M};
use crate::envsim::{Activity, ActivityKind, EnvState, EpisodeOptions, Pose};
use crate::error::{Error, Result};
use crate::planner::{
    current_node, fuse_actions, match_reference, plan_candidates, ActionLabel, ActionPrediction, FusedAction, FusedLabel, PlanCandidate, PlanPrediction, SpeechToken,
};
use crate::predictor::{apply_restrictions, PoseWindow, PredictorModel, CONFIDENCE_THRESHOLD, WINDOW};
use crate::scenario::{OperatorProfile, Scenario};
use crate::taskgraph::{replay_route, Agent, Completion, NodeId, ProgressTrace, RouteSequence, TaskGraph, VertexKey};

use super::dataset::prior_pose;
use super::{derive_seed, Group, Task, TrialRecord};

/// Steps an unanswered request waits before the operator repeats it.
pub const REPEAT_STEPS: u64 = 75;

/// Shared inputs of every trial.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub scenario: Arc<Scenario>,
    /// Required by groups that use vision.
    pub model: Option<PredictorModel>,
    pub timeout_steps: u64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Step {
    Fetch(ActionLabel),
    Work(u32),
    Robot { partner: Option<VertexKey> },
}

#[derive(Debug, Clone, PartialEq)]
struct AgendaItem {
    key: VertexKey,
    step: Step,
}

/// Plan steps of the task's nodes in the operator's order. A human vertex
/// that must finish together with a robot vertex rides along with it.
fn agenda(scenario: &Scenario, plan: &crate::scenario::HiddenPlan, nodes: &BTreeSet<NodeId>, work_scale: f64) -> Vec<AgendaItem> {
    let mut out = Vec::new();
    for node in plan.route.nodes().iter().filter(|n| nodes.contains(n)) {
        let tpg = &scenario.graph.nodes[node].subtask;
        for v in &plan.order[node] {
            let vx = &tpg.vertices[v];
            let key = VertexKey::new(*node, v.clone());
            let step = match vx.agent {
                Agent::Robot => Step::Robot {
                    partner: tpg.collaborative_partners(v).next().map(|p| VertexKey::new(*node, p.clone())),
                },
                Agent::Human if tpg.collaborative_partners(v).any(|p| tpg.vertices[p].agent == Agent::Robot) => continue,
                Agent::Human => match ActionLabel::parse(&vx.label) {
                    Some(l) if l != ActionLabel::NoAction => Step::Fetch(l),
                    _ => Step::Work(((vx.duration_steps as f64) * work_scale).round().max(1.0) as u32),
                },
            };
            out.push(AgendaItem { key, step });
        }
    }
    out
}

/// Speech token that requests `key`, if any.
pub fn token_for(scenario: &Scenario, key: &VertexKey) -> Option<SpeechToken> {
    scenario
        .speech_map
        .get(&key.node)
        .and_then(|m| m.iter().find(|(_, v)| **v == key.vertex).map(|(t, _)| *t))
}

/// Trace completing every node of `route` that precedes the task.
fn prefill(graph: &TaskGraph, route: &RouteSequence, task_nodes: &BTreeSet<NodeId>) -> Result<ProgressTrace> {
    let before: Vec<u32> = route.nodes().iter().take_while(|n| !task_nodes.contains(n)).map(|n| n.0).collect();
    if before.is_empty() {
        return Ok(ProgressTrace::new());
    }
    replay_route(graph, &RouteSequence::new(before), 0)
}

/// Append `key`, the vertices of its node that lead to it, and its
/// collaborative partners. Earlier nodes of `route` are completed first
/// when the node is not yet enabled.
fn commit(trace: &ProgressTrace, graph: &TaskGraph, route: &RouteSequence, key: &VertexKey, t: u64) -> Result<ProgressTrace> {
    let mut trace = trace.clone();
    if !trace.visited(key.node) && !graph.is_enabled(key.node, &trace.completed_nodes(graph)) {
        for n in route.nodes().iter().take_while(|n| **n != key.node) {
            if !trace.node_complete(graph, *n) {
                trace = complete_node(&trace, graph, *n, None, t)?;
            }
        }
    }
    complete_node(&trace, graph, key.node, Some(&key.vertex), t)
}

/// Complete the vertices of `node` leading to `target` (all of them when
/// `target` is `None`) in topological order.
fn complete_node(trace: &ProgressTrace, graph: &TaskGraph, node: NodeId, target: Option<&crate::taskgraph::VertexId>, t: u64) -> Result<ProgressTrace> {
    let tpg = &graph.node(node)?.subtask;
    let order = tpg.topological_order().ok_or_else(|| Error::Validation(format!("node {node}: cyclic TPG")))?;
    let wanted: BTreeSet<_> = match target {
        None => order.iter().cloned().collect(),
        Some(v) => {
            let mut set: BTreeSet<_> = std::iter::once(v.clone()).chain(tpg.collaborative_partners(v).cloned()).collect();
            let roots = set.clone();
            set.extend(order.iter().filter(|u| roots.iter().any(|r| tpg.reaches(u, r))).cloned());
            set
        }
    };
    let mut trace = trace.clone();
    for v in order.iter().filter(|v| wanted.contains(*v)) {
        if !trace.done_vertices(node).contains(v) {
            trace = trace.advance(graph, Completion::vertex(node, v.clone(), tpg.vertices[v].agent), t)?;
        }
    }
    Ok(trace)
}

/// Robot-side state.
struct Robot<'a> {
    scenario: &'a Scenario,
    model: Option<&'a PredictorModel>,
    routes: Vec<RouteSequence>,
    trace: ProgressTrace,
    /// Progress implied by accepted primitives only.
    confirmed: ProgressTrace,
    /// Last physical label that selected a candidate.
    cue: Option<ActionLabel>,
    retry: bool,
    /// Fixed order of robot vertices; `None` when plans are predicted.
    sequence: Option<Vec<VertexKey>>,
    excluded: BTreeMap<NodeId, BTreeSet<PrimitiveKind>>,
    memory: SelectionMemory,
    poses: VecDeque<Pose>,
    last_label: ActionLabel,
    proactive: bool,
}

impl Robot<'_> {
    fn perceive(&mut self, obs: &crate::envsim::ObservationFrame) -> ActionPrediction {
        let Some(model) = self.model else {
            return ActionPrediction::new(ActionLabel::NoAction, 0.0);
        };
        if let Some(f) = hierarchical_detect(obs, DEFAULT_RANGE_M, &mut self.memory) {
            self.poses.push_back(f.keypoints);
        } else {
            let last = *self.poses.back().expect("window is pre-filled");
            self.poses.push_back(last);
        }
        while self.poses.len() > WINDOW {
            self.poses.pop_front();
        }
        let poses: Vec<Pose> = self.poses.iter().copied().collect();
        let window = PoseWindow::from_poses(&poses).expect("window of WINDOW finite poses");
        let traj = model.predict_trajectory(&window);
        let p = model.classify(&window, &traj);
        apply_restrictions(p, &window, &traj, &self.scenario.boundaries, CONFIDENCE_THRESHOLD)
    }

    fn kind_of(&self, node: NodeId, intent: &crate::taskgraph::VertexId) -> Option<PrimitiveKind> {
        self.scenario.primitive_map.get(&VertexKey::new(node, intent.clone())).map(|s| s.kind)
    }

    /// Candidates for `fused`, also trying the next node when the only
    /// thing left in a route's current node is human work the robot cannot
    /// see. Returns the trace the candidates were computed on.
    fn candidates(&self, fused: &FusedAction, t: u64) -> Result<(Vec<PlanCandidate>, ProgressTrace)> {
        let graph = &self.scenario.graph;
        let sm = &self.scenario.speech_map;
        let matched = match_reference(&self.routes, &self.trace);
        let found = plan_candidates(&matched, fused, &self.trace, graph, sm)?;
        if !found.is_empty() || matches!(fused.label, FusedLabel::Physical(ActionLabel::NoAction)) {
            return Ok((found, self.trace.clone()));
        }
        for route in &matched {
            let Some(node) = current_node(route, &self.trace, graph) else {
                continue;
            };
            let tpg = &graph.node(node)?.subtask;
            let done = self.trace.done_vertices(node);
            if tpg.vertices.values().any(|v| v.agent == Agent::Robot && !done.contains(&v.id)) {
                continue;
            }
            let hypo = commit(&self.trace, graph, route, &VertexKey::new(node, tpg.vertices.keys().next_back().expect("non-empty TPG").clone()), t)
                .and_then(|tr| complete_node(&tr, graph, node, None, t))?;
            let rematched = match_reference(&self.routes, &hypo);
            let found = plan_candidates(&rematched, fused, &hypo, graph, sm)?;
            if !found.is_empty() {
                return Ok((found, hypo));
            }
        }
        Ok((Vec::new(), self.trace.clone()))
    }

    /// First ready robot vertex with an allowed primitive on a matched route.
    fn continuation(&self) -> Option<PlanCandidate> {
        self.continuation_on(&self.trace)
    }

    fn continuation_on(&self, trace: &ProgressTrace) -> Option<PlanCandidate> {
        let graph = &self.scenario.graph;
        for route in match_reference(&self.routes, trace) {
            let Some(node) = current_node(&route, trace, graph) else {
                continue;
            };
            let tpg = &graph.node(node).ok()?.subtask;
            let ready = tpg.ready_vertices(&trace.done_vertices(node)).ok()?;
            for v in ready {
                if tpg.vertices[&v].agent != Agent::Robot {
                    continue;
                }
                let allowed = self.kind_of(node, &v).is_some_and(|k| !self.excluded.get(&node).is_some_and(|e| e.contains(&k))) && self.in_sequence(node, &v);
                if allowed {
                    return Some(PlanCandidate {
                        node,
                        vertex: v.clone(),
                        intent: v,
                        route: route.clone(),
                    });
                }
            }
        }
        None
    }

    fn allowed(&self, c: &PlanCandidate) -> bool {
        match self.kind_of(c.node, &c.intent) {
            Some(k) => !self.excluded.get(&c.node).is_some_and(|e| e.contains(&k)) && self.in_sequence(c.node, &c.intent),
            None => false,
        }
    }

    /// Whether answering `intent` serves the next robot vertex of the fixed
    /// sequence, if there is one.
    fn in_sequence(&self, node: NodeId, intent: &crate::taskgraph::VertexId) -> bool {
        let Some(seq) = &self.sequence else {
            return true;
        };
        let Some(kind) = self.kind_of(node, intent) else {
            return false;
        };
        let served = served_robot_vertex(&self.scenario.graph, &VertexKey::new(node, intent.clone()), kind, &self.scenario.primitive_map);
        served.as_ref() == seq.iter().find(|k| !self.confirmed.contains(k))
    }

    /// Pick what to do this step, if anything.
    fn decide(&mut self, fused: &FusedAction, robot_idle: bool, accepted_now: bool, t: u64) -> Result<Option<(PlanCandidate, bool)>> {
        if fused.source == crate::planner::Source::Speech && !fused.is_stop() {
            let (cands, hypo) = self.candidates(fused, t)?;
            if let Some(c) = cands.into_iter().find(|c| self.kind_of(c.node, &c.intent).is_some() && self.in_sequence(c.node, &c.intent)) {
                if let Some(k) = self.kind_of(c.node, &c.intent) {
                    self.excluded.entry(c.node).or_default().remove(&k);
                }
                self.trace = hypo;
                return Ok(Some((c, true)));
            }
            return Ok(None);
        }
        let label = match fused.label {
            FusedLabel::Physical(l) => l,
            FusedLabel::Speech(_) => ActionLabel::NoAction,
        };
        let finished_fetch = self.last_label != ActionLabel::NoAction && label == ActionLabel::NoAction;
        let trigger_label = if self.proactive {
            Some(label)
        } else if finished_fetch {
            Some(self.last_label)
        } else if accepted_now {
            Some(ActionLabel::NoAction)
        } else {
            None
        };
        self.last_label = label;
        let trigger_label = match self.cue.filter(|_| self.retry && robot_idle) {
            Some(cue) => {
                self.retry = false;
                Some(cue)
            }
            None => trigger_label,
        };
        let Some(trigger) = trigger_label else {
            return Ok(None);
        };
        if !robot_idle {
            return Ok(None);
        }
        if trigger != ActionLabel::NoAction {
            let f = fuse_actions(ActionPrediction::new(trigger, 1.0), None);
            let (cands, hypo) = self.candidates(&f, t)?;
            if let Some(c) = cands.iter().find(|c| self.allowed(c)) {
                self.trace = hypo;
                self.cue = Some(trigger);
                return Ok(Some((c.clone(), false)));
            }
            // the cue's own primitive was turned down: assume the observed
            // step happened and offer another ready robot vertex
            for c in &cands {
                let assumed = commit(&hypo, &self.scenario.graph, &c.route, &VertexKey::new(c.node, c.intent.clone()), t)?;
                if let Some(next) = self.continuation_on(&assumed).filter(|n| n.node == c.node) {
                    self.trace = assumed;
                    self.cue = Some(trigger);
                    return Ok(Some((next, false)));
                }
            }
            if !self.proactive {
                return Ok(self.continuation().map(|c| (c, false)));
            }
            return Ok(None);
        }
        Ok(self.continuation().map(|c| (c, false)))
    }

    fn served(&self, p: &MotionPrimitive) -> Option<VertexKey> {
        let key = p.vertex.as_ref()?;
        served_robot_vertex(&self.scenario.graph, key, p.kind, &self.scenario.primitive_map)
    }

    fn route_for(&self, node: NodeId) -> RouteSequence {
        match_reference(&self.routes, &self.trace)
            .into_iter()
            .chain(self.routes.iter().cloned())
            .find(|r| r.contains(node))
            .unwrap_or_else(|| self.routes[0].clone())
    }

    fn accepted(&mut self, key: &VertexKey, t: u64) -> Result<()> {
        if !self.trace.contains(key) {
            let route = self.route_for(key.node);
            self.trace = commit(&self.trace, &self.scenario.graph, &route, key, t)?;
        }
        self.confirmed = self.trace.clone();
        self.excluded.clear();
        self.cue = None;
        Ok(())
    }

    /// Drop unconfirmed guesses after `p` was turned down and retry the
    /// last cue once the arm is free.
    fn rejected(&mut self, p: &MotionPrimitive) {
        if let Some(k) = &p.vertex {
            self.excluded.entry(k.node).or_default().insert(p.kind);
        }
        self.trace = self.confirmed.clone();
        self.retry = self.proactive && self.cue.is_some();
    }
}

/// Operator-side state.
struct Operator<'a> {
    scenario: &'a Scenario,
    profile: OperatorProfile,
    items: Vec<AgendaItem>,
    cursor: usize,
    started: bool,
    waited: u64,
    announced: BTreeSet<VertexKey>,
    last_request: Option<u64>,
    corrections: Vec<(u64, MotionPrimitive, VertexKey)>,
    speaks: bool,
    always_announce: bool,
    rng: ChaCha8Rng,
}

impl Operator<'_> {
    fn current(&self) -> Option<&AgendaItem> {
        self.items.get(self.cursor)
    }

    /// Next robot item at or after the cursor.
    fn expected_robot(&self) -> Option<&AgendaItem> {
        self.items[self.cursor.min(self.items.len())..].iter().find(|i| matches!(i.step, Step::Robot { .. }))
    }

    fn request(&mut self, env: &mut EnvState, key: &VertexKey, t: u64) {
        if let Some(tok) = token_for(self.scenario, key) {
            env.say(tok);
            self.last_request = Some(t);
        }
    }

    fn maybe_announce(&mut self, env: &mut EnvState, key: VertexKey, t: u64) {
        if !self.speaks || self.announced.contains(&key) {
            return;
        }
        self.announced.insert(key.clone());
        let draw: f64 = self.rng.random();
        if self.always_announce || draw < self.profile.proactive {
            self.request(env, &key, t);
        }
    }

    /// Start the next own activity, or announce the robot work waited for.
    fn act(&mut self, env: &mut EnvState, t: u64) {
        let Some(item) = self.current().cloned() else {
            return;
        };
        match &item.step {
            Step::Fetch(_) | Step::Work(_) if !self.started => {
                let kind = match item.step {
                    Step::Fetch(l) => ActivityKind::Fetch(l),
                    Step::Work(n) => ActivityKind::Work(n),
                    Step::Robot { .. } => unreachable!(),
                };
                env.enqueue(Activity {
                    kind,
                    vertex: Some(item.key.clone()),
                });
                self.started = true;
                if matches!(item.step, Step::Fetch(_)) {
                    if let Some(next) = self.items.get(self.cursor + 1).filter(|i| matches!(i.step, Step::Robot { .. })) {
                        let k = next.key.clone();
                        self.maybe_announce(env, k, t);
                    }
                }
            }
            Step::Robot { .. } => {
                self.maybe_announce(env, item.key.clone(), t);
            }
            _ => {}
        }
    }

    fn advance(&mut self) {
        self.cursor += 1;
        self.started = false;
        self.waited = 0;
        self.last_request = None;
    }
}

/// Operator profile and hidden plan of trial `trial`: profiles cycle
/// fastest, plans change after every full profile cycle.
pub fn trial_user(scenario: &Scenario, trial: usize) -> (&OperatorProfile, &crate::scenario::HiddenPlan) {
    let profile = &scenario.profiles[trial % scenario.profiles.len()];
    let plan = scenario.plans.values().nth((trial / scenario.profiles.len()) % scenario.plans.len()).expect("scenario defines plans");
    (profile, plan)
}

/// Run one trial to success, abandonment or timeout.
pub fn run_trial(ctx: &StudyContext, group: Group, task: Task, trial: usize, seed: u64) -> Result<TrialRecord> {
    let scenario = &*ctx.scenario;
    let graph = &scenario.graph;
    if scenario.profiles.is_empty() {
        return Err(Error::Config("scenario defines no operator profiles".into()));
    }
    let uses_vision = group.pm != 1;
    let model = if uses_vision {
        Some(ctx.model.as_ref().ok_or_else(|| Error::Config("vision groups need a trained predictor".into()))?)
    } else {
        None
    };
    let (profile, plan) = trial_user(scenario, trial);
    let (profile, plan) = (profile.clone(), plan.clone());
    let task_nodes = task.nodes(graph);

    let mut env = EnvState::new(
        Arc::clone(&ctx.scenario),
        seed,
        EpisodeOptions {
            profile: Some(profile.clone()),
            plan: Some(plan.id.clone()),
            autopilot: false,
            ..Default::default()
        },
    )?;
    let prefilled = prefill(graph, &plan.route, &task_nodes)?;
    let base = prefilled.last_time().unwrap_or(0);
    let mut truth = prefilled.clone();

    let default_route = scenario.plan(&scenario.operator.plan)?.route.clone();
    let (routes, sequence) = if group.pp == 1 {
        (scenario.routes.clone(), None)
    } else {
        let default_plan = scenario.plan(&scenario.operator.plan)?;
        let seq = default_route
            .nodes()
            .iter()
            .flat_map(|n| default_plan.order[n].iter().map(move |v| VertexKey::new(*n, v.clone())))
            .filter(|k| graph.nodes[&k.node].subtask.vertices[&k.vertex].agent == Agent::Robot)
            .collect();
        (vec![default_route], Some(seq))
    };
    let mut robot_mind = Robot {
        scenario,
        model,
        routes,
        trace: prefilled.clone(),
        confirmed: prefilled,
        cue: None,
        retry: false,
        sequence,
        excluded: BTreeMap::new(),
        memory: SelectionMemory::default(),
        poses: std::iter::repeat_n(prior_pose(scenario), WINDOW).collect(),
        last_label: ActionLabel::NoAction,
        proactive: group.pp == 1,
    };
    let items = agenda(scenario, &plan, &task_nodes, profile.work_scale);
    let planned: Vec<VertexKey> = items
        .iter()
        .flat_map(|i| match &i.step {
            Step::Robot { partner: Some(p) } => vec![i.key.clone(), p.clone()],
            _ => vec![i.key.clone()],
        })
        .collect();
    let mut op = Operator {
        scenario,
        profile: profile.clone(),
        items,
        cursor: 0,
        started: false,
        waited: 0,
        announced: BTreeSet::new(),
        last_request: None,
        corrections: Vec::new(),
        speaks: group.pm >= 1,
        always_announce: group.pm == 1,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x5eec])),
    };
    let mut executed: Vec<VertexKey> = Vec::new();
    let mut acct = ObjectiveAccount::new(ctx.lambda);
    let mut robot = env.robot.clone();
    let mut success = false;
    let mut steps = 0;
    let reaction = scenario.speech.reaction_steps;

    'trial: while steps < ctx.timeout_steps {
        steps += 1;
        op.act(&mut env, steps);
        let done_before = env.operator().completed.len();
        let (obs, speech) = env.step_mut()?;
        let t = base + env.clock;
        for key in env.operator().completed[done_before..].to_vec() {
            truth = truth.advance(graph, Completion::vertex(key.node, key.vertex.clone(), Agent::Human), t)?;
            executed.push(key.clone());
            if op.current().is_some_and(|i| i.key == key) {
                op.advance();
            }
        }

        let physical = robot_mind.perceive(&obs);
        let speech = if op.speaks { speech } else { None };
        let fused = fuse_actions(physical, speech);
        let idle = robot.is_idle() && robot.active_primitive().is_none_or(|p| p.kind != PrimitiveKind::ReturnObject);
        if let Some((cand, force)) = robot_mind.decide(&fused, idle, false, t)? {
            let pred = PlanPrediction {
                node: cand.node,
                next_vertex: cand.vertex.clone(),
                intent: cand.intent.clone(),
                route: cand.route.clone(),
                fallback: false,
                fused,
            };
            let prims = plan_motion(&pred, &robot, &robot_mind.trace, &scenario.primitive_map, &scenario.locations())?;
            let new_served = prims.first().and_then(|p| robot_mind.served(p));
            let active_served = robot.active_primitive().and_then(|p| robot_mind.served(p));
            let busy_recovering = robot.active_primitive().is_some_and(|p| p.kind == PrimitiveKind::ReturnObject);
            if prims.iter().any(MotionPrimitive::is_motion) && !busy_recovering && (idle || (force && new_served != active_served)) {
                robot.replan(prims);
            }
        }

        let expected = op.expected_robot().map(|i| i.key.clone());
        let at_robot_item = op.current().is_some_and(|i| matches!(i.step, Step::Robot { .. }));
        let (next_robot, next_acct, event) = tick(&robot, Some(&fused), &acct, |p| {
            let served = served_robot_vertex(graph, p.vertex.as_ref().expect("planned primitives carry a vertex"), p.kind, &scenario.primitive_map);
            match (&served, &expected) {
                (Some(s), Some(e)) if s == e && at_robot_item => Judgement::Accept,
                (Some(s), Some(e)) if s == e => Judgement::Wait,
                _ => Judgement::Reject,
            }
        });
        robot = next_robot;
        acct = next_acct;

        let mut accepted_now = false;
        match &event {
            TickEvent::Started(p) => {
                let served = robot_mind.served(p);
                if let Some(e) = &expected {
                    if served.as_ref() != Some(e) && op.speaks {
                        op.corrections.push((steps + reaction, p.clone(), e.clone()));
                    }
                }
            }
            TickEvent::Completed(p) => {
                let key = robot_mind.served(p).expect("accepted primitives serve a robot vertex");
                let partner = match op.current().map(|i| &i.step) {
                    Some(Step::Robot { partner }) => partner.clone(),
                    _ => None,
                };
                truth = truth.advance(graph, Completion::vertex(key.node, key.vertex.clone(), Agent::Robot), t)?;
                executed.push(key.clone());
                if let Some(h) = partner {
                    truth = truth.advance(graph, Completion::vertex(h.node, h.vertex.clone(), Agent::Human), t)?;
                    executed.push(h);
                }
                op.advance();
                robot_mind.accepted(&key, t)?;
                accepted_now = true;
            }
            TickEvent::Rejected(p) | TickEvent::Aborted(p) => {
                robot_mind.rejected(p);
                if acct.recovery_events > op.profile.tolerance {
                    break 'trial;
                }
            }
            TickEvent::None | TickEvent::Recovered => {}
        }
        if accepted_now {
            if let Some((cand, _)) = robot_mind.decide(&fuse_actions(ActionPrediction::new(ActionLabel::NoAction, 0.0), None), robot.is_idle(), true, t)? {
                let pred = PlanPrediction {
                    node: cand.node,
                    next_vertex: cand.vertex.clone(),
                    intent: cand.intent.clone(),
                    route: cand.route.clone(),
                    fallback: false,
                    fused: fuse_actions(ActionPrediction::new(ActionLabel::NoAction, 0.0), None),
                };
                let prims = plan_motion(&pred, &robot, &robot_mind.trace, &scenario.primitive_map, &scenario.locations())?;
                if prims.iter().any(MotionPrimitive::is_motion) {
                    robot.replan(prims);
                }
            }
        }

        // pending corrections: interrupt a wrong motion that is still running,
        // unless a request is already on its way
        let due: Vec<_> = op.corrections.iter().filter(|c| c.0 <= steps).cloned().collect();
        op.corrections.retain(|c| c.0 > steps);
        for (_, wrong, want) in due {
            if robot.active_primitive() == Some(&wrong) && env.pending_utterances() == 0 {
                env.say(SpeechToken::Stop);
                op.request(&mut env, &want, steps);
            }
        }

        if task_nodes.iter().all(|n| truth.node_complete(graph, *n)) {
            success = true;
            break;
        }
        if op.current().is_some_and(|i| matches!(i.step, Step::Robot { .. })) {
            op.waited += 1;
            if op.waited > op.profile.patience as u64 {
                break;
            }
            let serving = robot.active_primitive().and_then(|p| robot_mind.served(p));
            let key = op.current().expect("checked").key.clone();
            if op.speaks && serving.as_ref() != Some(&key) && op.last_request.is_none_or(|r| steps >= r + REPEAT_STEPS) && env.pending_utterances() == 0 {
                op.request(&mut env, &key, steps);
            }
        }
    }

    let recoveries = acct.recovery_events;
    Ok(TrialRecord {
        pp: group.pp,
        pm: group.pm,
        task: task.number(),
        trial,
        seed,
        success,
        completion_steps: if success { steps } else { ctx.timeout_steps },
        plan_satisfied: success && recoveries == 0 && executed == planned,
        recoveries,
        objective: objective_value(&acct),
    })
}
