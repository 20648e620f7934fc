//! Long-term And-Or task graph, per-node temporal plan graphs (TPGs) and
//! progress tracking.
//!
//! A [`TaskGraph`] is a DAG of subtask nodes grouped into stages. Nodes join
//! their predecessors with AND (all required) or OR (any one suffices)
//! semantics; a stage flagged `choice` commits to exactly one successor
//! branch once its last node completes. Each node carries a [`SubtaskTpg`]
//! whose vertices are single-agent actions ordered by precedence edges.
//!
//! Graphs are loaded from a TOML document with top-level keys `nodes`,
//! `stages`, `edges`, `start`, `goal` and `subtasks`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of routes `enumerate_routes` will produce.
pub const MAX_ROUTES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub String);

impl VertexId {
    pub fn new(s: impl Into<String>) -> Self {
        VertexId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VertexId {
    fn from(s: &str) -> Self {
        VertexId(s.to_owned())
    }
}

/// A vertex addressed globally: node plus vertex within that node's TPG.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexKey {
    pub node: NodeId,
    pub vertex: VertexId,
}

impl VertexKey {
    pub fn new(node: NodeId, vertex: impl Into<VertexId>) -> Self {
        VertexKey {
            node,
            vertex: vertex.into(),
        }
    }
}

impl fmt::Display for VertexKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node, self.vertex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Agent {
    Human,
    Robot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinKind {
    #[default]
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vertex {
    pub id: VertexId,
    pub agent: Agent,
    pub label: String,
    pub duration_steps: u32,
}

/// Multi-agent temporal plan graph of a single subtask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SubtaskTpg {
    pub vertices: BTreeMap<VertexId, Vertex>,
    pub precedence: BTreeSet<(VertexId, VertexId)>,
    /// Unordered pairs, stored with the smaller id first.
    pub collaborative: BTreeSet<(VertexId, VertexId)>,
}

impl SubtaskTpg {
    pub fn vertex(&self, id: &VertexId) -> Option<&Vertex> {
        self.vertices.get(id)
    }

    pub fn predecessors<'a>(&'a self, v: &'a VertexId) -> impl Iterator<Item = &'a VertexId> + 'a {
        self.precedence
            .iter()
            .filter(move |(_, b)| b == v)
            .map(|(a, _)| a)
    }

    pub fn successors<'a>(&'a self, v: &'a VertexId) -> impl Iterator<Item = &'a VertexId> + 'a {
        self.precedence
            .iter()
            .filter(move |(a, _)| a == v)
            .map(|(_, b)| b)
    }

    pub fn collaborative_partners<'a>(
        &'a self,
        v: &'a VertexId,
    ) -> impl Iterator<Item = &'a VertexId> + 'a {
        self.collaborative.iter().filter_map(move |(a, b)| {
            if a == v {
                Some(b)
            } else if b == v {
                Some(a)
            } else {
                None
            }
        })
    }

    /// All vertices not in `done` whose predecessors are all in `done`.
    pub fn ready_vertices(&self, done: &BTreeSet<VertexId>) -> Result<BTreeSet<VertexId>> {
        if let Some(unknown) = done.iter().find(|v| !self.vertices.contains_key(*v)) {
            return Err(Error::UnknownVertex {
                node: NodeId(0),
                vertex: unknown.clone(),
            });
        }
        Ok(self
            .vertices
            .keys()
            .filter(|v| !done.contains(*v))
            .filter(|v| self.predecessors(v).all(|p| done.contains(p)))
            .cloned()
            .collect())
    }

    /// True when `to` is reachable from `from` along precedence edges
    /// (a vertex reaches itself).
    pub fn reaches(&self, from: &VertexId, to: &VertexId) -> bool {
        let mut stack = vec![from];
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if v == to {
                return true;
            }
            if seen.insert(v) {
                stack.extend(self.successors(v));
            }
        }
        false
    }

    /// Kahn's algorithm, always taking the smallest ready id. `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<VertexId>> {
        let mut done = BTreeSet::new();
        let mut order = Vec::with_capacity(self.vertices.len());
        while order.len() < self.vertices.len() {
            let next = self.ready_vertices(&done).ok()?.into_iter().next()?;
            done.insert(next.clone());
            order.push(next);
        }
        Some(order)
    }

    fn validate(&self, node: NodeId) -> Result<()> {
        for (a, b) in self.precedence.iter().chain(&self.collaborative) {
            for v in [a, b] {
                if !self.vertices.contains_key(v) {
                    return Err(Error::Validation(format!(
                        "node {node}: edge references unknown vertex {v}"
                    )));
                }
            }
        }
        if self.topological_order().is_none() {
            return Err(Error::Validation(format!(
                "node {node}: precedence relation has a cycle"
            )));
        }
        for (a, b) in &self.collaborative {
            if a == b || self.reaches(a, b) || self.reaches(b, a) {
                return Err(Error::Validation(format!(
                    "node {node}: collaborative pair ({a}, {b}) is ordered by precedence"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskNode {
    pub id: NodeId,
    pub label: String,
    pub join: JoinKind,
    pub subtask: SubtaskTpg,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub id: String,
    pub nodes: BTreeSet<NodeId>,
    /// When set, completing the stage commits to one of its exits.
    pub choice: bool,
}

/// Ordered sequence of node ids through the long-term graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RouteSequence(pub Vec<NodeId>);

impl RouteSequence {
    pub fn new(ids: impl IntoIterator<Item = u32>) -> Self {
        RouteSequence(ids.into_iter().map(NodeId).collect())
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.0.contains(&node)
    }
}

impl fmt::Display for RouteSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraph {
    pub nodes: BTreeMap<NodeId, TaskNode>,
    pub stages: BTreeMap<String, Stage>,
    pub edges: BTreeSet<(NodeId, NodeId)>,
    pub start_nodes: BTreeSet<NodeId>,
    pub goal: NodeId,
}

impl TaskGraph {
    pub fn from_config_str(text: &str) -> Result<Self> {
        let file: GraphFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.into_graph()
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(&GraphFile::from_graph(self)).expect("graph config serializes")
    }

    pub fn node(&self, id: NodeId) -> Result<&TaskNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn vertex(&self, key: &VertexKey) -> Result<&Vertex> {
        self.node(key.node)?
            .subtask
            .vertex(&key.vertex)
            .ok_or_else(|| Error::UnknownVertex {
                node: key.node,
                vertex: key.vertex.clone(),
            })
    }

    pub fn stage_of(&self, node: NodeId) -> Option<&Stage> {
        self.stages.values().find(|s| s.nodes.contains(&node))
    }

    pub fn successors(&self, node: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(node)?;
        Ok(self
            .edges
            .iter()
            .filter(|(a, _)| *a == node)
            .map(|(_, b)| *b)
            .collect())
    }

    pub fn predecessors(&self, node: NodeId) -> Result<BTreeSet<NodeId>> {
        self.node(node)?;
        Ok(self
            .edges
            .iter()
            .filter(|(_, b)| *b == node)
            .map(|(a, _)| *a)
            .collect())
    }

    /// Whether `node`'s join condition is met by the `completed` node set.
    pub fn is_enabled(&self, node: NodeId, completed: &BTreeSet<NodeId>) -> bool {
        let Ok(preds) = self.predecessors(node) else {
            return false;
        };
        if preds.is_empty() {
            return self.start_nodes.contains(&node);
        }
        match self.nodes[&node].join {
            JoinKind::And => preds.iter().all(|p| completed.contains(p)),
            JoinKind::Or => preds.iter().any(|p| completed.contains(p)),
        }
    }

    /// Every precedence-respecting node sequence from a start node to the
    /// goal, in lexicographic order.
    pub fn enumerate_routes(&self) -> Result<Vec<RouteSequence>> {
        let mut routes = Vec::new();
        let mut search = RouteSearch {
            graph: self,
            seq: Vec::new(),
            completed: BTreeSet::new(),
            excluded: BTreeSet::new(),
            routes: &mut routes,
        };
        search.extend(None)?;
        routes.sort();
        Ok(routes)
    }

    /// True iff the goal node was entered and every vertex of its subtask
    /// appears in the trace.
    pub fn is_goal_reached(&self, trace: &ProgressTrace) -> bool {
        trace.node_complete(self, self.goal)
    }

    fn validate(&self) -> Result<()> {
        if !self.nodes.contains_key(&self.goal) {
            return Err(Error::Validation(format!("goal node {} does not exist", self.goal)));
        }
        if self.start_nodes.is_empty() {
            return Err(Error::Validation("no start node".into()));
        }
        if let Some(s) = self.start_nodes.iter().find(|s| !self.nodes.contains_key(s)) {
            return Err(Error::Validation(format!("start node {s} does not exist")));
        }
        for (a, b) in &self.edges {
            for n in [a, b] {
                if !self.nodes.contains_key(n) {
                    return Err(Error::Validation(format!(
                        "edge ({a}, {b}) references unknown node {n}"
                    )));
                }
            }
        }
        let mut owner: BTreeMap<NodeId, &str> = BTreeMap::new();
        for stage in self.stages.values() {
            for n in &stage.nodes {
                if !self.nodes.contains_key(n) {
                    return Err(Error::Validation(format!(
                        "stage {} references unknown node {n}",
                        stage.id
                    )));
                }
                if let Some(prev) = owner.insert(*n, &stage.id) {
                    return Err(Error::Validation(format!(
                        "node {n} belongs to stages {prev} and {}",
                        stage.id
                    )));
                }
            }
        }
        if let Some(n) = self.nodes.keys().find(|n| !owner.contains_key(n)) {
            return Err(Error::Validation(format!("node {n} belongs to no stage")));
        }
        if let Some(cycle_node) = self.find_cycle() {
            return Err(Error::Validation(format!("edge relation has a cycle through node {cycle_node}")));
        }
        for s in &self.start_nodes {
            if !self.reachable_from(*s).contains(&self.goal) {
                return Err(Error::Validation(format!(
                    "goal node {} is unreachable from start node {s}",
                    self.goal
                )));
            }
        }
        for node in self.nodes.values() {
            node.subtask.validate(node.id)?;
        }
        Ok(())
    }

    fn find_cycle(&self) -> Option<NodeId> {
        let mut indeg: BTreeMap<NodeId, usize> = self.nodes.keys().map(|n| (*n, 0)).collect();
        for (_, b) in &self.edges {
            *indeg.get_mut(b)? += 1;
        }
        let mut queue: VecDeque<NodeId> =
            indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut seen = 0;
        while let Some(n) = queue.pop_front() {
            seen += 1;
            for (_, b) in self.edges.iter().filter(|(a, _)| *a == n) {
                let d = indeg.get_mut(b)?;
                *d -= 1;
                if *d == 0 {
                    queue.push_back(*b);
                }
            }
        }
        (seen < self.nodes.len())
            .then(|| indeg.into_iter().find(|(_, d)| *d > 0).map(|(n, _)| n))
            .flatten()
    }

    fn reachable_from(&self, start: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(n) = stack.pop() {
            if seen.insert(n) {
                stack.extend(self.edges.iter().filter(|(a, _)| *a == n).map(|(_, b)| *b));
            }
        }
        seen
    }
}

struct RouteSearch<'a> {
    graph: &'a TaskGraph,
    seq: Vec<NodeId>,
    completed: BTreeSet<NodeId>,
    excluded: BTreeSet<NodeId>,
    routes: &'a mut Vec<RouteSequence>,
}

impl RouteSearch<'_> {
    /// `forced` restricts the next node to the exits of a choice stage.
    fn extend(&mut self, forced: Option<BTreeSet<NodeId>>) -> Result<()> {
        if self.completed.contains(&self.graph.goal) {
            if self.routes.len() >= MAX_ROUTES {
                return Err(Error::RouteExplosion { limit: MAX_ROUTES });
            }
            self.routes.push(RouteSequence(self.seq.clone()));
            return Ok(());
        }
        let mut candidates: Vec<NodeId> = if self.seq.is_empty() {
            self.graph.start_nodes.iter().copied().collect()
        } else {
            self.graph
                .nodes
                .keys()
                .copied()
                .filter(|n| !self.completed.contains(n) && !self.excluded.contains(n))
                .filter(|n| self.graph.is_enabled(*n, &self.completed))
                .collect()
        };
        if let Some(forced) = &forced {
            candidates.retain(|n| forced.contains(n));
        }
        // A started stage must be finished before another one begins.
        if let Some(open) = self.open_stage() {
            let inside: Vec<NodeId> =
                candidates.iter().copied().filter(|n| open.nodes.contains(n)).collect();
            if !inside.is_empty() {
                candidates = inside;
            }
        }
        for next in candidates {
            self.seq.push(next);
            self.completed.insert(next);
            let exits = self.graph.successors(next)?;
            let choice = self
                .graph
                .stage_of(next)
                .is_some_and(|s| s.choice && s.nodes.iter().all(|n| self.completed.contains(n)));
            if choice && exits.len() > 1 {
                for exit in &exits {
                    let newly: Vec<NodeId> = exits
                        .iter()
                        .copied()
                        .filter(|e| e != exit && self.excluded.insert(*e))
                        .collect();
                    self.extend(Some(BTreeSet::from([*exit])))?;
                    for e in newly {
                        self.excluded.remove(&e);
                    }
                }
            } else {
                self.extend(None)?;
            }
            self.completed.remove(&next);
            self.seq.pop();
        }
        Ok(())
    }

    fn open_stage(&self) -> Option<&Stage> {
        let last = self.seq.last()?;
        let stage = self.graph.stage_of(*last)?;
        stage
            .nodes
            .iter()
            .any(|n| !self.completed.contains(n) && !self.excluded.contains(n))
            .then_some(stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEntry {
    pub t: u64,
    pub node: NodeId,
    pub vertex: Option<VertexId>,
    pub agent: Agent,
}

/// Timestamped record of completed vertices. Value semantics: advancing
/// returns a new trace.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProgressTrace {
    entries: Vec<TraceEntry>,
}

/// A completion event to append to a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub node: NodeId,
    pub vertex: Option<VertexId>,
    pub agent: Agent,
}

impl Completion {
    pub fn vertex(node: NodeId, vertex: impl Into<VertexId>, agent: Agent) -> Self {
        Completion {
            node,
            vertex: Some(vertex.into()),
            agent,
        }
    }
}

impl ProgressTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_time(&self) -> Option<u64> {
        self.entries.last().map(|e| e.t)
    }

    /// Distinct node ids in order of first appearance.
    pub fn node_sequence(&self) -> Vec<NodeId> {
        let mut seq: Vec<NodeId> = Vec::new();
        for e in &self.entries {
            if !seq.contains(&e.node) {
                seq.push(e.node);
            }
        }
        seq
    }

    pub fn done_vertices(&self, node: NodeId) -> BTreeSet<VertexId> {
        self.entries
            .iter()
            .filter(|e| e.node == node)
            .filter_map(|e| e.vertex.clone())
            .collect()
    }

    pub fn contains(&self, key: &VertexKey) -> bool {
        self.entries
            .iter()
            .any(|e| e.node == key.node && e.vertex.as_ref() == Some(&key.vertex))
    }

    pub fn visited(&self, node: NodeId) -> bool {
        self.entries.iter().any(|e| e.node == node)
    }

    pub fn node_complete(&self, graph: &TaskGraph, node: NodeId) -> bool {
        let Ok(n) = graph.node(node) else {
            return false;
        };
        self.visited(node) && {
            let done = self.done_vertices(node);
            n.subtask.vertices.keys().all(|v| done.contains(v))
        }
    }

    pub fn completed_nodes(&self, graph: &TaskGraph) -> BTreeSet<NodeId> {
        self.node_sequence()
            .into_iter()
            .filter(|n| self.node_complete(graph, *n))
            .collect()
    }

    /// Append a completion, checking time order, node enabling, TPG
    /// precedence and collaborative synchronization.
    pub fn advance(&self, graph: &TaskGraph, completion: Completion, t: u64) -> Result<ProgressTrace> {
        if let Some(last) = self.last_time() {
            if t < last {
                return Err(Error::NonMonotonicTime { t, last });
            }
        }
        let node = graph.node(completion.node)?;
        if !self.visited(node.id) && !graph.is_enabled(node.id, &self.completed_nodes(graph)) {
            return Err(Error::Validation(format!(
                "node {} is not enabled by the completed nodes",
                node.id
            )));
        }
        if let Some(v) = &completion.vertex {
            let tpg = &node.subtask;
            let vertex = tpg.vertex(v).ok_or_else(|| Error::UnknownVertex {
                node: node.id,
                vertex: v.clone(),
            })?;
            let done = self.done_vertices(node.id);
            if done.contains(v) {
                return Err(Error::Validation(format!(
                    "vertex {v} of node {} already completed",
                    node.id
                )));
            }
            if let Some(missing) = tpg.predecessors(v).find(|p| !done.contains(*p)) {
                return Err(Error::PrecedenceViolation {
                    node: node.id,
                    vertex: v.clone(),
                    missing: missing.clone(),
                });
            }
            for partner in tpg.collaborative_partners(v) {
                if let Some(e) = self
                    .entries
                    .iter()
                    .find(|e| e.node == node.id && e.vertex.as_ref() == Some(partner))
                {
                    if e.t != t {
                        return Err(Error::CollaborativeMismatch {
                            node: node.id,
                            a: partner.clone(),
                            b: v.clone(),
                        });
                    }
                }
            }
            if vertex.agent != completion.agent {
                return Err(Error::Validation(format!(
                    "vertex {v} of node {} belongs to {:?}, not {:?}",
                    node.id, vertex.agent, completion.agent
                )));
            }
        }
        let mut next = self.clone();
        next.entries.push(TraceEntry {
            t,
            node: completion.node,
            vertex: completion.vertex,
            agent: completion.agent,
        });
        Ok(next)
    }
}

/// Append a completion to a trace; see [`ProgressTrace::advance`].
pub fn advance_progress(
    graph: &TaskGraph,
    trace: &ProgressTrace,
    completion: Completion,
    t: u64,
) -> Result<ProgressTrace> {
    trace.advance(graph, completion, t)
}

/// Ready vertices of a TPG given the completed set.
pub fn tpg_ready_vertices(tpg: &SubtaskTpg, done: &BTreeSet<VertexId>) -> Result<BTreeSet<VertexId>> {
    tpg.ready_vertices(done)
}

/// Replay a route by completing every vertex of each node in the TPG's
/// lexicographic topological order, one step per vertex. Collaborative
/// partners share a timestamp.
pub fn replay_route(graph: &TaskGraph, route: &RouteSequence, start_t: u64) -> Result<ProgressTrace> {
    let mut trace = ProgressTrace::new();
    let mut t = start_t;
    for &node_id in route.nodes() {
        let node = graph.node(node_id)?;
        let order = node
            .subtask
            .topological_order()
            .ok_or_else(|| Error::Validation(format!("node {node_id}: cyclic TPG")))?;
        if order.is_empty() {
            trace = trace.advance(
                graph,
                Completion {
                    node: node_id,
                    vertex: None,
                    agent: Agent::Human,
                },
                t,
            )?;
        }
        let mut stamped: BTreeMap<VertexId, u64> = BTreeMap::new();
        let mut pending: Vec<VertexId> = order;
        // Collaborative partners must be ready together; defer a vertex
        // until its partners are ready as well.
        while !pending.is_empty() {
            let done = trace.done_vertices(node_id);
            let ready = node.subtask.ready_vertices(&done)?;
            let pos = pending
                .iter()
                .position(|v| {
                    ready.contains(v)
                        && node
                            .subtask
                            .collaborative_partners(v)
                            .all(|p| ready.contains(p) || done.contains(p))
                })
                .ok_or_else(|| Error::Validation(format!("node {node_id}: TPG cannot be replayed")))?;
            let v = pending.remove(pos);
            let vt = node
                .subtask
                .collaborative_partners(&v)
                .find_map(|p| stamped.get(p).copied())
                .unwrap_or_else(|| {
                    t += 1;
                    t
                });
            stamped.insert(v.clone(), vt);
            let agent = node.subtask.vertices[&v].agent;
            trace = trace.advance(graph, Completion::vertex(node_id, v, agent), vt)?;
        }
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// config file schema

#[derive(Debug, Serialize, Deserialize)]
struct GraphFile {
    goal: u32,
    start: Vec<u32>,
    edges: Vec<[u32; 2]>,
    nodes: Vec<NodeEntry>,
    stages: Vec<StageEntry>,
    #[serde(default)]
    subtasks: BTreeMap<String, SubtaskEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeEntry {
    id: u32,
    label: String,
    #[serde(default)]
    join: JoinKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageEntry {
    id: String,
    nodes: Vec<u32>,
    #[serde(default)]
    choice: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct SubtaskEntry {
    vertices: Vec<VertexEntry>,
    #[serde(default)]
    precedence: Vec<[String; 2]>,
    #[serde(default)]
    collaborative: Vec<[String; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VertexEntry {
    id: String,
    agent: Agent,
    label: String,
    duration: u32,
}

impl GraphFile {
    fn into_graph(self) -> Result<TaskGraph> {
        let mut subtasks = self.subtasks;
        let mut nodes = BTreeMap::new();
        for entry in self.nodes {
            let id = NodeId(entry.id);
            let raw = subtasks.remove(&entry.id.to_string()).unwrap_or_default();
            let mut tpg = SubtaskTpg::default();
            for v in raw.vertices {
                let vid = VertexId(v.id);
                if tpg.vertices.contains_key(&vid) {
                    return Err(Error::Validation(format!("node {id}: duplicate vertex {vid}")));
                }
                tpg.vertices.insert(
                    vid.clone(),
                    Vertex {
                        id: vid,
                        agent: v.agent,
                        label: v.label,
                        duration_steps: v.duration,
                    },
                );
            }
            tpg.precedence = raw
                .precedence
                .into_iter()
                .map(|[a, b]| (VertexId(a), VertexId(b)))
                .collect();
            tpg.collaborative = raw
                .collaborative
                .into_iter()
                .map(|[a, b]| {
                    let (a, b) = (VertexId(a), VertexId(b));
                    if a <= b {
                        (a, b)
                    } else {
                        (b, a)
                    }
                })
                .collect();
            let node = TaskNode {
                id,
                label: entry.label,
                join: entry.join,
                subtask: tpg,
            };
            if nodes.insert(id, node).is_some() {
                return Err(Error::Validation(format!("duplicate node id {id}")));
            }
        }
        if let Some(orphan) = subtasks.keys().next() {
            return Err(Error::Validation(format!("subtask for unknown node {orphan}")));
        }
        let mut stages = BTreeMap::new();
        for s in self.stages {
            let stage = Stage {
                id: s.id.clone(),
                nodes: s.nodes.into_iter().map(NodeId).collect(),
                choice: s.choice,
            };
            if stages.insert(s.id.clone(), stage).is_some() {
                return Err(Error::Validation(format!("duplicate stage id {}", s.id)));
            }
        }
        let graph = TaskGraph {
            nodes,
            stages,
            edges: self.edges.into_iter().map(|[a, b]| (NodeId(a), NodeId(b))).collect(),
            start_nodes: self.start.into_iter().map(NodeId).collect(),
            goal: NodeId(self.goal),
        };
        graph.validate()?;
        Ok(graph)
    }

    fn from_graph(g: &TaskGraph) -> Self {
        GraphFile {
            goal: g.goal.0,
            start: g.start_nodes.iter().map(|n| n.0).collect(),
            edges: g.edges.iter().map(|(a, b)| [a.0, b.0]).collect(),
            nodes: g
                .nodes
                .values()
                .map(|n| NodeEntry {
                    id: n.id.0,
                    label: n.label.clone(),
                    join: n.join,
                })
                .collect(),
            stages: g
                .stages
                .values()
                .map(|s| StageEntry {
                    id: s.id.clone(),
                    nodes: s.nodes.iter().map(|n| n.0).collect(),
                    choice: s.choice,
                })
                .collect(),
            subtasks: g
                .nodes
                .values()
                .map(|n| {
                    let t = &n.subtask;
                    let entry = SubtaskEntry {
                        vertices: t
                            .vertices
                            .values()
                            .map(|v| VertexEntry {
                                id: v.id.0.clone(),
                                agent: v.agent,
                                label: v.label.clone(),
                                duration: v.duration_steps,
                            })
                            .collect(),
                        precedence: t.precedence.iter().map(|(a, b)| [a.0.clone(), b.0.clone()]).collect(),
                        collaborative: t
                            .collaborative
                            .iter()
                            .map(|(a, b)| [a.0.clone(), b.0.clone()])
                            .collect(),
                    };
                    (n.id.0.to_string(), entry)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TOYCAR_GRAPH;

    fn toycar() -> TaskGraph {
        TaskGraph::from_config_str(TOYCAR_GRAPH).unwrap()
    }

    fn simple(nodes: &[u32], edges: &[[u32; 2]], start: &[u32], goal: u32, extra: &str) -> String {
        let mut s = format!("goal = {goal}\nstart = {start:?}\nedges = {edges:?}\n");
        s.push_str(extra);
        for n in nodes {
            s.push_str(&format!("[[nodes]]\nid = {n}\nlabel = \"n{n}\"\n"));
        }
        s
    }

    fn own_stages(nodes: &[u32], choice: &[u32]) -> String {
        nodes
            .iter()
            .map(|n| format!("[[stages]]\nid = \"s{n}\"\nnodes = [{n}]\nchoice = {}\n", choice.contains(n)))
            .collect()
    }

    fn chain3() -> TaskGraph {
        let text = simple(&[1, 2, 3], &[[1, 2], [2, 3]], &[1], 3, "") + &own_stages(&[1, 2, 3], &[]);
        TaskGraph::from_config_str(&text).unwrap()
    }

    #[test]
    fn toycar_shape() {
        let g = toycar();
        assert_eq!(g.nodes.len(), 7);
        assert_eq!(g.stages.len(), 4);
        assert_eq!(g.goal, NodeId(7));
        assert_eq!(g.start_nodes, BTreeSet::from([NodeId(1)]));
    }

    #[test]
    fn single_node_graph_is_valid() {
        let text = simple(&[1], &[], &[1], 1, "") + &own_stages(&[1], &[]);
        let g = TaskGraph::from_config_str(&text).unwrap();
        assert_eq!(g.enumerate_routes().unwrap(), vec![RouteSequence::new([1])]);
    }

    #[test]
    fn back_edge_is_a_cycle() {
        let text = TOYCAR_GRAPH.replacen("edges = [", "edges = [[7, 1], ", 1);
        match TaskGraph::from_config_str(&text) {
            Err(Error::Validation(msg)) => assert!(msg.contains("cycle"), "{msg}"),
            other => panic!("expected cycle error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_and_unreachable_are_rejected() {
        let text = simple(&[1, 2], &[[1, 3]], &[1], 2, "") + &own_stages(&[1, 2], &[]);
        assert!(matches!(TaskGraph::from_config_str(&text), Err(Error::Validation(m)) if m.contains('3')));
        let text = simple(&[1, 2], &[], &[1], 2, "") + &own_stages(&[1, 2], &[]);
        assert!(matches!(TaskGraph::from_config_str(&text), Err(Error::Validation(m)) if m.contains("unreachable")));
        assert!(matches!(TaskGraph::from_config_str("goal = ["), Err(Error::Parse(_))));
    }

    #[test]
    fn successors_examples() {
        let g = toycar();
        assert_eq!(g.successors(NodeId(2)).unwrap(), BTreeSet::from([NodeId(3), NodeId(5)]));
        assert!(g.successors(g.goal).unwrap().is_empty());
        assert_eq!(chain3().successors(NodeId(1)).unwrap(), BTreeSet::from([NodeId(2)]));
        assert_eq!(g.successors(NodeId(99)), Err(Error::UnknownNode(NodeId(99))));
    }

    #[test]
    fn routes_chain_and_diamond() {
        assert_eq!(chain3().enumerate_routes().unwrap(), vec![RouteSequence::new([1, 2, 3])]);
        let text = simple(&[1, 2, 3], &[[1, 2], [1, 3], [2, 4], [3, 4]], &[1], 4, "")
            + "[[nodes]]\nid = 4\nlabel = \"n4\"\njoin = \"or\"\n"
            + &own_stages(&[1, 2, 3, 4], &[1]);
        let g = TaskGraph::from_config_str(&text).unwrap();
        assert_eq!(
            g.enumerate_routes().unwrap(),
            vec![RouteSequence::new([1, 2, 4]), RouteSequence::new([1, 3, 4])]
        );
    }

    #[test]
    fn toycar_routes_cover_both_orders() {
        let routes = toycar().enumerate_routes().unwrap();
        assert_eq!(
            routes,
            vec![
                RouteSequence::new([1, 2, 3, 4, 5, 6, 7]),
                RouteSequence::new([1, 2, 5, 6, 3, 4, 7])
            ]
        );
    }

    #[test]
    fn route_explosion_is_refused() {
        // 15 mutually unordered single-node stages: 15! orderings.
        let n: Vec<u32> = (1..=15).collect();
        let mut edges: Vec<[u32; 2]> = n.iter().map(|i| [0, *i]).collect();
        edges.extend(n.iter().map(|i| [*i, 16]));
        let mut all = vec![0];
        all.extend(&n);
        all.push(16);
        let text = simple(&all, &edges, &[0], 16, "") + &own_stages(&all, &[]);
        let g = TaskGraph::from_config_str(&text).unwrap();
        assert_eq!(g.enumerate_routes(), Err(Error::RouteExplosion { limit: MAX_ROUTES }));
    }

    #[test]
    fn ready_vertices_examples() {
        let mut tpg = SubtaskTpg::default();
        for id in ["A", "B"] {
            tpg.vertices.insert(
                id.into(),
                Vertex {
                    id: id.into(),
                    agent: Agent::Human,
                    label: id.into(),
                    duration_steps: 1,
                },
            );
        }
        tpg.precedence.insert(("A".into(), "B".into()));
        assert_eq!(tpg.ready_vertices(&BTreeSet::new()).unwrap(), BTreeSet::from(["A".into()]));
        let all: BTreeSet<VertexId> = tpg.vertices.keys().cloned().collect();
        assert!(tpg.ready_vertices(&all).unwrap().is_empty());
        assert!(tpg.ready_vertices(&BTreeSet::from(["Z".into()])).is_err());
    }

    #[test]
    fn advance_checks_precedence() {
        let g = toycar();
        let t0 = ProgressTrace::new();
        let t1 = t0.advance(&g, Completion::vertex(NodeId(1), "A", Agent::Human), 3).unwrap();
        assert_eq!(t1.len(), 1);
        assert!(t0.is_empty());
        let err = t0
            .advance(&g, Completion::vertex(NodeId(1), "E", Agent::Robot), 3)
            .unwrap_err();
        assert!(matches!(err, Error::PrecedenceViolation { .. }));
        assert!(matches!(
            t1.advance(&g, Completion::vertex(NodeId(1), "E", Agent::Robot), 2),
            Err(Error::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn goal_detection() {
        let g = toycar();
        assert!(!g.is_goal_reached(&ProgressTrace::new()));
        let full = replay_route(&g, &RouteSequence::new([1, 2, 3, 4, 5, 6, 7]), 0).unwrap();
        assert!(g.is_goal_reached(&full));
        let partial = replay_route(&g, &RouteSequence::new([1, 2, 3, 4, 5, 6]), 0).unwrap();
        assert!(!g.is_goal_reached(&partial));
    }

    #[test]
    fn collaborative_pairs_share_timestamps() {
        let g = toycar();
        let node = g.node(NodeId(2)).unwrap();
        let (a, b) = node.subtask.collaborative.iter().next().cloned().unwrap();
        let mut trace = replay_route(&g, &RouteSequence::new([1]), 0).unwrap();
        for v in node.subtask.topological_order().unwrap() {
            if v == a || v == b {
                continue;
            }
            if node.subtask.predecessors(&v).any(|p| *p == a || *p == b) {
                break;
            }
            let agent = node.subtask.vertices[&v].agent;
            trace = trace.advance(&g, Completion::vertex(NodeId(2), v, agent), 100).unwrap();
        }
        let ag = node.subtask.vertices[&a].agent;
        let bg = node.subtask.vertices[&b].agent;
        let t = trace.advance(&g, Completion::vertex(NodeId(2), a.clone(), ag), 101).unwrap();
        assert!(matches!(
            t.advance(&g, Completion::vertex(NodeId(2), b.clone(), bg), 102),
            Err(Error::CollaborativeMismatch { .. })
        ));
        assert!(t.advance(&g, Completion::vertex(NodeId(2), b, bg), 101).is_ok());
    }

    #[test]
    fn config_round_trip() {
        let g = toycar();
        let again = TaskGraph::from_config_str(&g.to_config_string()).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn plan_one_after_connectors_assembly_is_ready() {
        let mut tpg = SubtaskTpg::default();
        for (id, agent, label) in [
            ("A", Agent::Human, "GetConnectors"),
            ("B", Agent::Human, "AssembleTubes"),
            ("A2", Agent::Human, "GetConnectors"),
            ("B2", Agent::Human, "AssembleTubes"),
        ] {
            tpg.vertices.insert(
                id.into(),
                Vertex {
                    id: id.into(),
                    agent,
                    label: label.into(),
                    duration_steps: 30,
                },
            );
        }
        for (a, b) in [("A", "B"), ("B", "A2"), ("A2", "B2")] {
            tpg.precedence.insert((a.into(), b.into()));
        }
        let ready = tpg_ready_vertices(&tpg, &BTreeSet::from(["A".into()])).unwrap();
        assert_eq!(ready, BTreeSet::from(["B".into()]));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Chain backbone plus random forward edges, random joins and
        /// choice flags, each node in its own stage.
        fn random_graph() -> impl Strategy<Value = String> {
            (2usize..7).prop_flat_map(|n| {
                (
                    Just(n),
                    proptest::collection::vec(any::<bool>(), n * n),
                    proptest::collection::vec(any::<bool>(), n),
                    proptest::collection::vec(any::<bool>(), n),
                )
                    .prop_map(|(n, extra, ors, choices)| {
                        let mut edges = Vec::new();
                        for i in 0..n {
                            for j in i + 1..n {
                                if j == i + 1 || extra[i * n + j] {
                                    edges.push([i as u32 + 1, j as u32 + 1]);
                                }
                            }
                        }
                        let mut s = format!("goal = {n}\nstart = [1]\nedges = {edges:?}\n");
                        for i in 0..n {
                            let join = if ors[i] { "or" } else { "and" };
                            s.push_str(&format!(
                                "[[nodes]]\nid = {}\nlabel = \"n\"\njoin = \"{join}\"\n",
                                i + 1
                            ));
                            s.push_str(&format!(
                                "[[stages]]\nid = \"s{}\"\nnodes = [{}]\nchoice = {}\n",
                                i + 1,
                                i + 1,
                                choices[i]
                            ));
                            s.push_str(&format!(
                                "[subtasks.{}]\nvertices = [{{ id = \"X\", agent = \"human\", label = \"x\", duration = 1 }}, {{ id = \"Y\", agent = \"robot\", label = \"y\", duration = 1 }}]\nprecedence = [[\"X\", \"Y\"]]\n",
                                i + 1
                            ));
                        }
                        s
                    })
            })
        }

        proptest! {
            #[test]
            fn routes_replay_to_goal(text in random_graph()) {
                let g = TaskGraph::from_config_str(&text).unwrap();
                let routes = g.enumerate_routes().unwrap();
                prop_assert_eq!(&routes, &g.enumerate_routes().unwrap());
                for r in &routes {
                    let trace = replay_route(&g, r, 0).unwrap();
                    prop_assert!(g.is_goal_reached(&trace));
                }
            }

            #[test]
            fn config_round_trips(text in random_graph()) {
                let g = TaskGraph::from_config_str(&text).unwrap();
                prop_assert_eq!(TaskGraph::from_config_str(&g.to_config_string()).unwrap(), g);
            }

            #[test]
            fn ready_set_excludes_done(mask in proptest::collection::vec(any::<bool>(), 4)) {
                let g = toycar();
                let tpg = &g.node(NodeId(1)).unwrap().subtask;
                let done: BTreeSet<VertexId> = tpg
                    .vertices
                    .keys()
                    .zip(&mask)
                    .filter(|(_, m)| **m)
                    .map(|(v, _)| v.clone())
                    .collect();
                let ready = tpg.ready_vertices(&done).unwrap();
                prop_assert!(ready.is_disjoint(&done));
            }
        }
    }
}
