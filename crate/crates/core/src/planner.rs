//! Plan prediction: fuse the physical and spoken action channels, align the
//! observed progress against candidate routes with DTW, and refine the fused
//! action into the next vertex the robot should serve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskgraph::{NodeId, ProgressTrace, RouteSequence, TaskGraph, VertexId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionLabel {
    NoAction,
    GetConnectors,
    GetScrews,
    GetWheels,
}

impl ActionLabel {
    pub const ALL: [ActionLabel; 4] = [
        ActionLabel::NoAction,
        ActionLabel::GetConnectors,
        ActionLabel::GetScrews,
        ActionLabel::GetWheels,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionLabel::NoAction => "NoAction",
            ActionLabel::GetConnectors => "GetConnectors",
            ActionLabel::GetScrews => "GetScrews",
            ActionLabel::GetWheels => "GetWheels",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionPrediction {
    pub label: ActionLabel,
    pub confidence: f64,
}

impl ActionPrediction {
    pub fn new(label: ActionLabel, confidence: f64) -> Self {
        ActionPrediction {
            label,
            confidence: confidence.clamp(0.0, 1.0),
        }
    }

    pub fn none() -> Self {
        ActionPrediction::new(ActionLabel::NoAction, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechToken {
    Short,
    Long,
    Spin,
    Lift,
    Stop,
}

impl SpeechToken {
    pub const ALL: [SpeechToken; 5] = [
        SpeechToken::Short,
        SpeechToken::Long,
        SpeechToken::Spin,
        SpeechToken::Lift,
        SpeechToken::Stop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpeechToken::Short => "short",
            SpeechToken::Long => "long",
            SpeechToken::Spin => "spin",
            SpeechToken::Lift => "lift",
            SpeechToken::Stop => "stop",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for SpeechToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechEvent {
    pub token: SpeechToken,
    pub confidence: f64,
    pub t: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusedLabel {
    Physical(ActionLabel),
    Speech(SpeechToken),
}

impl fmt::Display for FusedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusedLabel::Physical(l) => l.fmt(f),
            FusedLabel::Speech(t) => t.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    Vision,
    Speech,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedAction {
    pub label: FusedLabel,
    pub source: Source,
    pub confidence: f64,
}

impl FusedAction {
    pub fn is_stop(&self) -> bool {
        self.label == FusedLabel::Speech(SpeechToken::Stop)
    }
}

/// Per-node mapping from speech tokens to the vertex they request.
pub type SpeechMap = BTreeMap<NodeId, BTreeMap<SpeechToken, VertexId>>;

#[derive(Debug, Clone, PartialEq)]
pub struct PlanPrediction {
    pub node: NodeId,
    /// Ready vertex of `node` the prediction points at.
    pub next_vertex: VertexId,
    /// Vertex the human asked for; a descendant of `next_vertex` when speech
    /// names work that waits on an unfinished human vertex.
    pub intent: VertexId,
    pub route: RouteSequence,
    pub fallback: bool,
    pub fused: FusedAction,
}

/// `stop` always wins; otherwise the strictly more confident channel wins and
/// ties go to vision.
pub fn fuse_actions(physical: ActionPrediction, speech: Option<SpeechEvent>) -> FusedAction {
    let vision = FusedAction {
        label: FusedLabel::Physical(physical.label),
        source: Source::Vision,
        confidence: physical.confidence,
    };
    match speech {
        Some(s) if s.token == SpeechToken::Stop || s.confidence > physical.confidence => FusedAction {
            label: FusedLabel::Speech(s.token),
            source: Source::Speech,
            confidence: s.confidence,
        },
        _ => vision,
    }
}

/// DTW accumulated cost table with 0/1 symbol cost; entry `[i][j]` aligns
/// `a[..=i]` with `b[..=j]`.
fn dtw_table(a: &[NodeId], b: &[NodeId]) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let mut d = vec![vec![f64::INFINITY; m]; n];
    for i in 0..n {
        for j in 0..m {
            let cost = if a[i] == b[j] { 0.0 } else { 1.0 };
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => d[0][j - 1],
                (_, 0) => d[i - 1][0],
                _ => d[i - 1][j - 1].min(d[i - 1][j]).min(d[i][j - 1]),
            };
            d[i][j] = cost + best;
        }
    }
    d
}

pub fn dtw_distance(a: &[NodeId], b: &[NodeId]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(dtw_table(a, b)[a.len() - 1][b.len() - 1])
}

/// Minimum DTW distance between `observed` and any prefix of `route` at least
/// as long as `observed`. Prefixes shorter than that are not considered; if
/// the route itself is shorter, the whole route is used.
pub fn prefix_distance(observed: &[NodeId], route: &RouteSequence) -> f64 {
    if observed.is_empty() {
        return 0.0;
    }
    let r = route.nodes();
    if r.is_empty() {
        return f64::INFINITY;
    }
    let d = dtw_table(observed, r);
    let last = &d[observed.len() - 1];
    let from = observed.len().min(r.len()) - 1;
    last[from..].iter().copied().fold(f64::INFINITY, f64::min)
}

/// Routes with minimal prefix distance to the trace's node sequence, ties
/// retained, in input order.
pub fn match_reference(routes: &[RouteSequence], trace: &ProgressTrace) -> Vec<RouteSequence> {
    let observed = trace.node_sequence();
    let scored: Vec<(f64, &RouteSequence)> =
        routes.iter().map(|r| (prefix_distance(&observed, r), r)).collect();
    let best = scored.iter().map(|(d, _)| *d).fold(f64::INFINITY, f64::min);
    scored
        .into_iter()
        .filter(|(d, _)| *d == best)
        .map(|(_, r)| r.clone())
        .collect()
}

/// A ready vertex compatible with a fused action on one matched route.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlanCandidate {
    pub node: NodeId,
    pub vertex: VertexId,
    pub intent: VertexId,
    pub route: RouteSequence,
}

/// First node of `route` whose subtask is not complete in `trace`.
pub fn current_node(route: &RouteSequence, trace: &ProgressTrace, graph: &TaskGraph) -> Option<NodeId> {
    route
        .nodes()
        .iter()
        .copied()
        .find(|n| !trace.node_complete(graph, *n))
}

fn ready_of(graph: &TaskGraph, trace: &ProgressTrace, node: NodeId) -> Result<BTreeSet<VertexId>> {
    graph
        .node(node)?
        .subtask
        .ready_vertices(&trace.done_vertices(node))
        .map_err(|_| Error::NoReadyVertex(node))
}

/// Compatible (ready vertex, intent) pairs for `fused` on one node. Physical
/// labels match by label equality; speech tokens go through `speech_map` and
/// also accept a ready ancestor of the requested vertex.
pub fn compatible_vertices(
    graph: &TaskGraph,
    node: NodeId,
    ready: &BTreeSet<VertexId>,
    fused: &FusedAction,
    speech_map: &SpeechMap,
) -> Result<Vec<(VertexId, VertexId)>> {
    let tpg = &graph.node(node)?.subtask;
    Ok(match fused.label {
        FusedLabel::Physical(ActionLabel::NoAction) => Vec::new(),
        FusedLabel::Physical(label) => ready
            .iter()
            .filter(|v| tpg.vertices[*v].label == label.as_str())
            .map(|v| (v.clone(), v.clone()))
            .collect(),
        FusedLabel::Speech(token) => {
            let Some(target) = speech_map.get(&node).and_then(|m| m.get(&token)) else {
                return Ok(Vec::new());
            };
            if ready.contains(target) {
                vec![(target.clone(), target.clone())]
            } else {
                ready
                    .iter()
                    .filter(|u| tpg.reaches(u, target))
                    .map(|u| (u.clone(), target.clone()))
                    .collect()
            }
        }
    })
}

/// Every compatible candidate across the matched routes, sorted and
/// de-duplicated by (node, vertex, intent); the first route wins a tie.
pub fn plan_candidates(
    matched: &[RouteSequence],
    fused: &FusedAction,
    trace: &ProgressTrace,
    graph: &TaskGraph,
    speech_map: &SpeechMap,
) -> Result<Vec<PlanCandidate>> {
    let mut out: BTreeMap<(NodeId, VertexId, VertexId), RouteSequence> = BTreeMap::new();
    for route in matched {
        let Some(node) = current_node(route, trace, graph) else {
            continue;
        };
        let ready = ready_of(graph, trace, node)?;
        for (vertex, intent) in compatible_vertices(graph, node, &ready, fused, speech_map)? {
            out.entry((node, vertex, intent)).or_insert_with(|| route.clone());
        }
    }
    Ok(out
        .into_iter()
        .map(|((node, vertex, intent), route)| PlanCandidate {
            node,
            vertex,
            intent,
            route,
        })
        .collect())
}

/// Map the fused action onto a ready vertex. A single distinct candidate is
/// a determinate refinement; none or several fall back to the first
/// candidate, or the lexicographically first ready vertex when none exists.
pub fn refine_plan(
    matched: &[RouteSequence],
    fused: FusedAction,
    trace: &ProgressTrace,
    graph: &TaskGraph,
    speech_map: &SpeechMap,
) -> Result<PlanPrediction> {
    let candidates = plan_candidates(matched, &fused, trace, graph, speech_map)?;
    if let Some(first) = candidates.first() {
        return Ok(PlanPrediction {
            node: first.node,
            next_vertex: first.vertex.clone(),
            intent: first.intent.clone(),
            route: first.route.clone(),
            fallback: candidates.len() > 1,
            fused,
        });
    }
    let mut best: Option<(NodeId, VertexId, &RouteSequence)> = None;
    let mut exhausted = None;
    for route in matched {
        let Some(node) = current_node(route, trace, graph) else {
            exhausted = route.nodes().last().copied();
            continue;
        };
        if let Some(v) = ready_of(graph, trace, node)?.into_iter().next() {
            if best.as_ref().is_none_or(|(bn, bv, _)| (node, &v) < (*bn, bv)) {
                best = Some((node, v, route));
            }
        }
    }
    match best {
        Some((node, v, route)) => Ok(PlanPrediction {
            node,
            next_vertex: v.clone(),
            intent: v,
            route: route.clone(),
            fallback: true,
            fused,
        }),
        None => Err(Error::NoReadyVertex(exhausted.unwrap_or(graph.goal))),
    }
}

/// Static inputs of plan prediction.
#[derive(Debug, Clone)]
pub struct PlanContext<'a> {
    pub graph: &'a TaskGraph,
    pub routes: &'a [RouteSequence],
    pub speech_map: &'a SpeechMap,
}

/// Fuse, match and refine in one call.
pub fn predict_plan(
    ctx: &PlanContext<'_>,
    trace: &ProgressTrace,
    physical: ActionPrediction,
    speech: Option<SpeechEvent>,
) -> Result<PlanPrediction> {
    let fused = fuse_actions(physical, speech);
    let matched = match_reference(ctx.routes, trace);
    refine_plan(&matched, fused, trace, ctx.graph, ctx.speech_map)
}
