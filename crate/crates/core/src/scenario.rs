//! Scenario configuration: workcell layout, operator and distractor models,
//! speech and primitive tables, hidden plans and operator profiles.
//!
//! The shipped toy-car graph and scenario are embedded and available through
//! [`Scenario::toycar`].

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::controller::{Locations, PrimitiveMap, PrimitiveSpec};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, Point3};
use crate::planner::{ActionLabel, PlanContext, SpeechMap, SpeechToken};
use crate::predictor::Boundaries;
use crate::taskgraph::{replay_route, NodeId, RouteSequence, TaskGraph, VertexId, VertexKey};

pub const TOYCAR_GRAPH: &str = include_str!("../data/toycar.graph");
pub const TOYCAR_SCENARIO: &str = include_str!("../data/toycar.scenario");

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorConfig {
    pub station: Point3,
    pub rest_hand: Point3,
    pub reach_steps: u32,
    pub dwell_steps: u32,
    pub jitter: f64,
    pub score_range: (f64, f64),
    pub plan: String,
    pub speech_script: Vec<(u64, SpeechToken)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistractorConfig {
    pub count: usize,
    pub speed: f64,
    pub score_range: (f64, f64),
    pub bounds: Aabb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechModel {
    pub confidence: f64,
    /// Probability a command is not recognized at all.
    pub miss: f64,
    /// Probability a command is heard as its confusable partner.
    pub confusion: f64,
    pub confused_confidence: f64,
    /// Steps from utterance start to the recognized event.
    pub latency_steps: u64,
    /// Steps a speaker needs to react to what they see.
    pub reaction_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fov_deg: f64,
    pub distance_noise: f64,
}

/// High-level route plus per-node vertex order.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenPlan {
    pub id: String,
    pub route: RouteSequence,
    pub order: BTreeMap<NodeId, Vec<VertexId>>,
}

/// Simulated operator characteristics.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorProfile {
    pub name: String,
    pub reach_steps: u32,
    pub offset: Point3,
    /// Multiplier on human work durations.
    pub work_scale: f64,
    /// Wrong robot actions accepted before giving up.
    pub tolerance: u32,
    /// Longest single wait for the robot, in steps.
    pub patience: u32,
    /// Probability of announcing a request before the robot acts.
    pub proactive: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub graph: TaskGraph,
    pub routes: Vec<RouteSequence>,
    pub steps_per_second: u32,
    pub objects: BTreeMap<String, Point3>,
    pub robot_points: BTreeMap<String, Point3>,
    pub camera: Camera,
    pub operator: OperatorConfig,
    pub distractors: DistractorConfig,
    pub speech: SpeechModel,
    pub plans: BTreeMap<String, HiddenPlan>,
    pub speech_map: SpeechMap,
    pub primitive_map: PrimitiveMap,
    pub boundaries: Boundaries,
    pub profiles: Vec<OperatorProfile>,
}

impl Scenario {
    /// The shipped toy-car scenario.
    pub fn toycar() -> Self {
        Self::from_strs(TOYCAR_GRAPH, TOYCAR_SCENARIO).expect("shipped scenario is valid")
    }

    pub fn from_strs(graph_text: &str, scenario_text: &str) -> Result<Self> {
        let graph = TaskGraph::from_config_str(graph_text)?;
        let file: ScenarioFile = toml::from_str(scenario_text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_scenario(graph)
    }

    pub fn robot_home(&self) -> Point3 {
        self.robot_points.get("home").copied().unwrap_or(Point3::ORIGIN)
    }

    /// Object positions and named robot points in one table.
    pub fn locations(&self) -> Locations {
        let mut l = self.objects.clone();
        l.extend(self.robot_points.iter().map(|(k, v)| (k.clone(), *v)));
        l
    }

    pub fn object(&self, id: &str) -> Result<Point3> {
        self.objects
            .get(id)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown object {id}")))
    }

    pub fn plan(&self, id: &str) -> Result<&HiddenPlan> {
        self.plans
            .get(id)
            .ok_or_else(|| Error::Config(format!("unknown plan {id}")))
    }

    /// Bin the operator reaches into for a fetch label.
    pub fn bin_for(&self, label: ActionLabel) -> Option<Point3> {
        let id = match label {
            ActionLabel::GetConnectors => "connectors",
            ActionLabel::GetScrews => "screws",
            ActionLabel::GetWheels => "wheels",
            ActionLabel::NoAction => return None,
        };
        self.objects.get(id).copied()
    }

    pub fn plan_context<'a>(&'a self) -> PlanContext<'a> {
        PlanContext {
            graph: &self.graph,
            routes: self.routes(),
            speech_map: &self.speech_map,
        }
    }

    pub fn routes(&self) -> &[RouteSequence] {
        &self.routes
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    rates: RatesEntry,
    robot: BTreeMap<String, [f64; 3]>,
    camera: CameraEntry,
    objects: Vec<ObjectEntry>,
    operator: OperatorEntry,
    distractors: DistractorEntry,
    speech: SpeechEntry,
    #[serde(default)]
    plans: Vec<PlanEntry>,
    speech_map: BTreeMap<String, BTreeMap<SpeechToken, String>>,
    primitive_map: BTreeMap<String, BTreeMap<String, PrimitiveSpec>>,
    #[serde(default)]
    boundaries: BTreeMap<String, BoxEntry>,
    #[serde(default)]
    profiles: Vec<ProfileEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RatesEntry {
    steps_per_second: u32,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraEntry {
    fov_deg: f64,
    distance_noise: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectEntry {
    id: String,
    xyz: Point3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorEntry {
    station: Point3,
    rest_hand: Point3,
    reach_steps: u32,
    dwell_steps: u32,
    jitter: f64,
    score_range: (f64, f64),
    plan: String,
    #[serde(default)]
    speech_script: Vec<(u64, SpeechToken)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistractorEntry {
    count: usize,
    speed: f64,
    score_range: (f64, f64),
    bounds: BoxEntry,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeechEntry {
    confidence: f64,
    #[serde(default)]
    miss: f64,
    #[serde(default)]
    confusion: f64,
    confused_confidence: f64,
    latency_steps: u64,
    reaction_steps: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanEntry {
    id: String,
    route: Vec<u32>,
    #[serde(default)]
    order: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoxEntry {
    min: Point3,
    max: Point3,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileEntry {
    name: String,
    reach_steps: u32,
    offset: Point3,
    work_scale: f64,
    tolerance: u32,
    patience: u32,
    proactive: f64,
}

fn cfg(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn node_key(graph: &TaskGraph, key: &str) -> Result<NodeId> {
    let id = key
        .parse::<u32>()
        .map(NodeId)
        .map_err(|_| cfg(format!("node key {key:?} is not an integer")))?;
    graph.node(id).map_err(|_| cfg(format!("unknown node {id}")))?;
    Ok(id)
}

fn vertex_key(graph: &TaskGraph, node: NodeId, v: String) -> Result<VertexKey> {
    let key = VertexKey::new(node, VertexId(v));
    graph
        .vertex(&key)
        .map_err(|_| cfg(format!("unknown vertex {key}")))?;
    Ok(key)
}

fn range(name: &str, (lo, hi): (f64, f64)) -> Result<(f64, f64)> {
    if (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi {
        Ok((lo, hi))
    } else {
        Err(cfg(format!("{name} must satisfy 0 <= lo <= hi <= 1")))
    }
}

fn probability(name: &str, p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(cfg(format!("{name} must lie in [0, 1]")))
    }
}

fn aabb(name: &str, b: BoxEntry) -> Result<Aabb> {
    Aabb::new(b.min, b.max).ok_or_else(|| cfg(format!("box {name} is not well formed")))
}

impl ScenarioFile {
    fn into_scenario(self, graph: TaskGraph) -> Result<Scenario> {
        if self.rates.steps_per_second == 0 {
            return Err(cfg("rates.steps_per_second must be positive"));
        }
        let mut objects = BTreeMap::new();
        for o in self.objects {
            if !o.xyz.is_finite() {
                return Err(cfg(format!("object {} has non-finite coordinates", o.id)));
            }
            if objects.insert(o.id.clone(), o.xyz).is_some() {
                return Err(cfg(format!("duplicate object {}", o.id)));
            }
        }
        let robot_points: BTreeMap<String, Point3> =
            self.robot.into_iter().map(|(k, v)| (k, Point3::from(v))).collect();
        if !robot_points.contains_key("home") {
            return Err(cfg("robot.home is required"));
        }

        let op = self.operator;
        if op.reach_steps == 0 || !(op.jitter >= 0.0) {
            return Err(cfg("operator.reach_steps must be positive and jitter non-negative"));
        }
        let operator = OperatorConfig {
            station: op.station,
            rest_hand: op.rest_hand,
            reach_steps: op.reach_steps,
            dwell_steps: op.dwell_steps,
            jitter: op.jitter,
            score_range: range("operator.score_range", op.score_range)?,
            plan: op.plan,
            speech_script: op.speech_script,
        };
        let d = self.distractors;
        if !(d.speed >= 0.0) {
            return Err(cfg("distractors.speed must be non-negative"));
        }
        let distractors = DistractorConfig {
            count: d.count,
            speed: d.speed,
            score_range: range("distractors.score_range", d.score_range)?,
            bounds: aabb("distractors.bounds", d.bounds)?,
        };
        let s = self.speech;
        let speech = SpeechModel {
            confidence: probability("speech.confidence", s.confidence)?,
            miss: probability("speech.miss", s.miss)?,
            confusion: probability("speech.confusion", s.confusion)?,
            confused_confidence: probability("speech.confused_confidence", s.confused_confidence)?,
            latency_steps: s.latency_steps,
            reaction_steps: s.reaction_steps,
        };
        if !(self.camera.fov_deg > 0.0 && self.camera.distance_noise >= 0.0) {
            return Err(cfg("camera.fov_deg must be positive and distance_noise non-negative"));
        }

        let mut speech_map: SpeechMap = BTreeMap::new();
        for (n, m) in self.speech_map {
            let node = node_key(&graph, &n)?;
            let mut entry = BTreeMap::new();
            for (token, v) in m {
                entry.insert(token, vertex_key(&graph, node, v)?.vertex);
            }
            speech_map.insert(node, entry);
        }
        let locations: BTreeMap<&String, ()> =
            objects.keys().chain(robot_points.keys()).map(|k| (k, ())).collect();
        let mut primitive_map = PrimitiveMap::new();
        for (n, m) in self.primitive_map {
            let node = node_key(&graph, &n)?;
            for (v, spec) in m {
                if !locations.contains_key(&spec.target) {
                    return Err(cfg(format!("primitive target {} is not a known location", spec.target)));
                }
                if spec.duration == 0 {
                    return Err(cfg("primitive duration must be positive"));
                }
                primitive_map.insert(vertex_key(&graph, node, v)?, spec);
            }
        }

        let mut plans = BTreeMap::new();
        for p in self.plans {
            let route = RouteSequence::new(p.route.iter().copied());
            replay_route(&graph, &route, 0)
                .ok()
                .filter(|t| graph.is_goal_reached(t))
                .ok_or_else(|| cfg(format!("plan {} route {route} does not reach the goal", p.id)))?;
            let mut order = BTreeMap::new();
            for (n, vs) in p.order {
                let node = node_key(&graph, &n)?;
                let tpg = &graph.nodes[&node].subtask;
                let seq: Vec<VertexId> = vs.into_iter().map(VertexId).collect();
                let mut done = std::collections::BTreeSet::new();
                for v in &seq {
                    let ready = tpg.ready_vertices(&done)?;
                    let partner_ok = tpg.collaborative_partners(v).all(|q| ready.contains(q) || done.contains(q));
                    if !ready.contains(v) || !partner_ok {
                        return Err(cfg(format!("plan {} orders vertex {v} of node {node} too early", p.id)));
                    }
                    done.insert(v.clone());
                }
                if done.len() != tpg.vertices.len() {
                    return Err(cfg(format!("plan {} does not order every vertex of node {node}", p.id)));
                }
                order.insert(node, seq);
            }
            for node in route.nodes() {
                order
                    .entry(*node)
                    .or_insert_with(|| graph.nodes[node].subtask.topological_order().unwrap_or_default());
            }
            plans.insert(p.id.clone(), HiddenPlan { id: p.id, route, order });
        }
        if !plans.contains_key(&operator.plan) {
            return Err(cfg(format!("operator plan {} is not defined", operator.plan)));
        }

        let mut boundaries = Boundaries::new();
        for (label, b) in self.boundaries {
            let l = ActionLabel::parse(&label)
                .filter(|l| *l != ActionLabel::NoAction)
                .ok_or_else(|| cfg(format!("boundary for unknown action {label}")))?;
            boundaries.insert(l, aabb(&label, b)?);
        }
        let mut profiles = Vec::new();
        for p in self.profiles {
            if p.reach_steps == 0 || !(p.work_scale > 0.0) {
                return Err(cfg(format!("profile {} needs positive reach_steps and work_scale", p.name)));
            }
            profiles.push(OperatorProfile {
                name: p.name,
                reach_steps: p.reach_steps,
                offset: p.offset,
                work_scale: p.work_scale,
                tolerance: p.tolerance,
                patience: p.patience,
                proactive: probability("profile.proactive", p.proactive)?,
            });
        }
        let routes = graph.enumerate_routes()?;
        Ok(Scenario {
            graph,
            routes,
            steps_per_second: self.rates.steps_per_second,
            objects,
            robot_points,
            camera: Camera {
                fov_deg: self.camera.fov_deg,
                distance_noise: self.camera.distance_noise,
            },
            operator,
            distractors,
            speech,
            plans,
            speech_map,
            primitive_map,
            boundaries,
            profiles,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenario_loads() {
        let s = Scenario::toycar();
        assert_eq!(s.objects.len(), 5);
        assert_eq!(s.steps_per_second, 30);
        assert_eq!(s.plans.len(), 2);
        assert_eq!(s.routes().len(), 2);
        assert_eq!(s.boundaries.len(), 3);
        assert!(!s.profiles.is_empty());
        for b in s.boundaries.values() {
            assert!(!b.contains(s.operator.rest_hand));
        }
    }

    #[test]
    fn bad_references_are_config_errors() {
        let bad = TOYCAR_SCENARIO.replace("long = \"F\"\n\n[speech_map.2]", "long = \"Z\"\n\n[speech_map.2]");
        assert!(matches!(Scenario::from_strs(TOYCAR_GRAPH, &bad), Err(Error::Config(m)) if m.contains("1:Z")));
        let bad = TOYCAR_SCENARIO.replace("plan = \"top-first\"", "plan = \"sideways\"");
        assert!(matches!(Scenario::from_strs(TOYCAR_GRAPH, &bad), Err(Error::Config(_))));
        assert!(matches!(Scenario::from_strs(TOYCAR_GRAPH, "rates = 3"), Err(Error::Config(_))));
    }
}
