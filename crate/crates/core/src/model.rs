//! Dataflow graph model: nodes, data and interaction dependencies, and the
//! structural rules that keep a dataflow executable.
//!
//! A [`DataflowSpec`] is an immutable snapshot. [`apply_mutation`] returns a
//! new snapshot or rejects the mutation without touching the input, so any
//! sequence of accepted mutations leaves a spec that passes [`validate`].

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::fmt;

use chrono::{DateTime, Utc};
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{self, WidgetValues};
use crate::canonical::{to_canonical_vec, ContentHash};
use crate::layers::LayerKind;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Loader,
    Wrangle,
    Transform,
    Analysis,
    Visualization,
    Interaction,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Loader => "loader",
            NodeKind::Wrangle => "wrangle",
            NodeKind::Transform => "transform",
            NodeKind::Analysis => "analysis",
            NodeKind::Visualization => "visualization",
            NodeKind::Interaction => "interaction",
        }
    }
}

/// Layer kinds a port accepts. An empty set accepts any kind.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortKinds(pub BTreeSet<LayerKind>);

impl PortKinds {
    pub fn any() -> Self {
        PortKinds(BTreeSet::new())
    }

    pub fn of(kinds: &[LayerKind]) -> Self {
        PortKinds(kinds.iter().copied().collect())
    }

    pub fn is_any(&self) -> bool {
        self.0.is_empty()
    }

    pub fn accepts(&self, kind: LayerKind) -> bool {
        self.is_any() || self.0.contains(&kind)
    }

    /// Whether an output port of kinds `self` may feed an input of kinds `input`.
    pub fn compatible_with(&self, input: &PortKinds) -> bool {
        self.is_any() || input.is_any() || !self.0.is_disjoint(&input.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub user: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    pub template_id: String,
    /// Code or view document with annotations; the stored source of truth.
    pub canonical_code: String,
    #[serde(default, deserialize_with = "annotations::deserialize_values")]
    pub widget_values: WidgetValues,
    #[serde(default)]
    pub pinned: bool,
    #[serde(default)]
    pub comments: Vec<Comment>,
    /// Port declarations copied from the template when the node is created.
    #[serde(default)]
    pub ports_in: Vec<PortKinds>,
    #[serde(default)]
    pub ports_out: Vec<PortKinds>,
}

impl NodeSpec {
    pub fn new(
        id: impl Into<NodeId>,
        kind: NodeKind,
        template_id: impl Into<String>,
        code: impl Into<String>,
        ports_in: Vec<PortKinds>,
        ports_out: Vec<PortKinds>,
    ) -> Self {
        NodeSpec {
            id: id.into(),
            kind,
            template_id: template_id.into(),
            canonical_code: code.into(),
            widget_values: WidgetValues::new(),
            pinned: false,
            comments: Vec::new(),
            ports_in,
            ports_out,
        }
    }

    /// An interaction node with `ports` pass-through ports. The selection
    /// applies to the layer on port 0.
    pub fn interaction(id: impl Into<NodeId>, ports: usize) -> Self {
        let ports = ports.max(1);
        NodeSpec::new(
            id,
            NodeKind::Interaction,
            "interaction",
            "",
            vec![PortKinds::any(); ports],
            vec![PortKinds::any(); ports],
        )
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// Binding of a source output port to a target input port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PortSlot {
    pub output: usize,
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataDependency {
    pub source: NodeId,
    pub target: NodeId,
    pub layer_slots: Vec<PortSlot>,
}

impl DataDependency {
    pub fn new(source: impl Into<NodeId>, target: impl Into<NodeId>) -> Self {
        DataDependency::with_slot(source, target, 0, 0)
    }

    pub fn with_slot(source: impl Into<NodeId>, target: impl Into<NodeId>, output: usize, input: usize) -> Self {
        DataDependency {
            source: source.into(),
            target: target.into(),
            layer_slots: vec![PortSlot { output, input }],
        }
    }
}

/// Key attributes relating records of two linked interaction nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkKeys {
    /// Attribute in `endpoint_a`'s selected layer.
    pub local_key_attr: String,
    /// Attribute in `endpoint_b`'s selected layer.
    pub remote_key_attr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionDependency {
    pub endpoint_a: NodeId,
    pub endpoint_b: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkKeys>,
}

impl InteractionDependency {
    pub fn touches(&self, id: &NodeId) -> bool {
        self.endpoint_a == *id || self.endpoint_b == *id
    }

    fn same_pair(&self, other: &InteractionDependency) -> bool {
        (self.endpoint_a == other.endpoint_a && self.endpoint_b == other.endpoint_b)
            || (self.endpoint_a == other.endpoint_b && self.endpoint_b == other.endpoint_a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CanvasRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(default)]
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataflowSpec {
    pub id: String,
    pub name: String,
    pub nodes: Vec<NodeSpec>,
    pub data_deps: Vec<DataDependency>,
    pub interaction_deps: Vec<InteractionDependency>,
    pub canvas: BTreeMap<NodeId, CanvasRect>,
}

impl DataflowSpec {
    pub fn empty(id: impl Into<String>, name: impl Into<String>) -> Self {
        DataflowSpec {
            id: id.into(),
            name: name.into(),
            nodes: Vec::new(),
            data_deps: Vec::new(),
            interaction_deps: Vec::new(),
            canvas: BTreeMap::new(),
        }
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == *id)
    }

    fn node_mut(&mut self, id: &NodeId) -> Result<&mut NodeSpec, ModelError> {
        self.nodes.iter_mut().find(|n| n.id == *id).ok_or_else(|| ModelError::UnknownId(id.0.clone()))
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.iter().any(|n| n.id == *id)
    }

    /// Canonical document bytes (sorted keys, no whitespace).
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&self.to_canonical_bytes())
    }

    /// Upstream sources of `target` by input port, sorted by input port.
    pub fn inputs_of(&self, target: &NodeId) -> Vec<(usize, &NodeId, usize)> {
        let mut inputs: Vec<(usize, &NodeId, usize)> = self
            .data_deps
            .iter()
            .filter(|d| d.target == *target)
            .flat_map(|d| d.layer_slots.iter().map(move |s| (s.input, &d.source, s.output)))
            .collect();
        inputs.sort_by(|a, b| a.0.cmp(&b.0));
        inputs
    }

    /// Nodes pinned for visualization mode, with the edges among them.
    pub fn pinned_view(&self) -> DataflowSpec {
        let keep: HashSet<&NodeId> = self.nodes.iter().filter(|n| n.pinned).map(|n| &n.id).collect();
        DataflowSpec {
            id: self.id.clone(),
            name: self.name.clone(),
            nodes: self.nodes.iter().filter(|n| n.pinned).cloned().collect(),
            data_deps: Vec::new(),
            interaction_deps: Vec::new(),
            canvas: self.canvas.iter().filter(|(k, _)| keep.contains(k)).map(|(k, v)| (k.clone(), *v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    Cycle,
    DanglingRef,
    MissingDataDep,
    PortConflict,
    LayerKindMismatch,
    DuplicateId,
    InvalidInteraction,
    InvalidNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub detail: String,
    pub involved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport { ok: violations.is_empty(), violations }
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("edge would create a cycle through {0:?}")]
    WouldCreateCycle(Vec<String>),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("port conflict: {0}")]
    PortConflict(String),
    #[error("layer kind mismatch: {0}")]
    LayerKindMismatch(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid widget value: {0}")]
    InvalidWidgetValue(String),
    #[error("invalid dataflow: {0}")]
    Invalid(String),
    #[error("dataflow is not a DAG")]
    NotADag,
}

fn violation(code: ViolationCode, detail: impl Into<String>, involved: Vec<String>) -> Violation {
    Violation { code, detail: detail.into(), involved }
}

/// Check every structural rule and report all violations.
pub fn validate(spec: &DataflowSpec) -> ValidationReport {
    let mut out = Vec::new();
    let mut by_id: HashMap<&NodeId, &NodeSpec> = HashMap::new();
    for node in &spec.nodes {
        if by_id.insert(&node.id, node).is_some() {
            out.push(violation(ViolationCode::DuplicateId, format!("node id {} repeated", node.id), vec![node.id.0.clone()]));
        }
        check_node(node, &mut out);
    }

    let mut bound_inputs: HashMap<(&NodeId, usize), &NodeId> = HashMap::new();
    for dep in &spec.data_deps {
        let involved = vec![dep.source.0.clone(), dep.target.0.clone()];
        let (Some(src), Some(dst)) = (by_id.get(&dep.source), by_id.get(&dep.target)) else {
            out.push(violation(
                ViolationCode::DanglingRef,
                format!("data dependency {} -> {} references a missing node", dep.source, dep.target),
                involved,
            ));
            continue;
        };
        if dep.layer_slots.is_empty() {
            out.push(violation(ViolationCode::PortConflict, "data dependency binds no ports", involved.clone()));
        }
        for slot in &dep.layer_slots {
            let (Some(out_kinds), Some(in_kinds)) = (src.ports_out.get(slot.output), dst.ports_in.get(slot.input)) else {
                out.push(violation(
                    ViolationCode::PortConflict,
                    format!("slot {}->{} names a port that does not exist", slot.output, slot.input),
                    involved.clone(),
                ));
                continue;
            };
            if let Some(prev) = bound_inputs.insert((&dep.target, slot.input), &dep.source) {
                out.push(violation(
                    ViolationCode::PortConflict,
                    format!("input port {} of {} bound by both {} and {}", slot.input, dep.target, prev, dep.source),
                    involved.clone(),
                ));
            }
            if !out_kinds.compatible_with(in_kinds) {
                out.push(violation(
                    ViolationCode::LayerKindMismatch,
                    format!("output {} of {} cannot feed input {} of {}", slot.output, dep.source, slot.input, dep.target),
                    involved.clone(),
                ));
            }
        }
    }

    for cycle in cycles(spec) {
        out.push(violation(ViolationCode::Cycle, format!("cycle through {}", cycle.join(", ")), cycle));
    }

    for dep in &spec.interaction_deps {
        let involved = vec![dep.endpoint_a.0.clone(), dep.endpoint_b.0.clone()];
        let (Some(a), Some(b)) = (by_id.get(&dep.endpoint_a), by_id.get(&dep.endpoint_b)) else {
            out.push(violation(ViolationCode::DanglingRef, "interaction dependency references a missing node", involved));
            continue;
        };
        let a_int = a.kind == NodeKind::Interaction;
        let b_int = b.kind == NodeKind::Interaction;
        if !a_int || !(b_int || b.kind == NodeKind::Visualization) {
            out.push(violation(
                ViolationCode::InvalidInteraction,
                "interaction dependency must join an interaction node to a visualization or interaction node",
                involved.clone(),
            ));
        }
        if dep.link.is_some() != (a_int && b_int) {
            out.push(violation(
                ViolationCode::InvalidInteraction,
                "link keys are required exactly for interaction-to-interaction dependencies",
                involved.clone(),
            ));
        }
        let has_data = spec.data_deps.iter().any(|d| {
            (d.source == dep.endpoint_a && d.target == dep.endpoint_b)
                || (d.source == dep.endpoint_b && d.target == dep.endpoint_a)
        });
        if !has_data {
            out.push(violation(
                ViolationCode::MissingDataDep,
                format!("no data dependency between {} and {}", dep.endpoint_a, dep.endpoint_b),
                involved,
            ));
        }
    }
    ValidationReport::from_violations(out)
}

fn check_node(node: &NodeSpec, out: &mut Vec<Violation>) {
    let involved = vec![node.id.0.clone()];
    if node.kind == NodeKind::Interaction {
        if !node.canonical_code.is_empty() {
            out.push(violation(ViolationCode::InvalidNode, "interaction nodes carry no code", involved.clone()));
        }
        if node.ports_in.len() != node.ports_out.len() || node.ports_in.is_empty() {
            out.push(violation(ViolationCode::InvalidNode, "interaction nodes pass every input through", involved.clone()));
        }
    }
    if !node.widget_values.is_empty() {
        match annotations::parse_annotations(&node.canonical_code) {
            Ok(sites) => {
                if let Err(e) = annotations::check_values(&sites, &node.widget_values) {
                    out.push(violation(ViolationCode::InvalidNode, e.to_string(), involved));
                }
            }
            Err(e) => out.push(violation(ViolationCode::InvalidNode, e.to_string(), involved)),
        }
    }
}

/// Strongly connected components that form cycles, each sorted by id.
fn cycles(spec: &DataflowSpec) -> Vec<Vec<String>> {
    let mut graph = DiGraph::<&NodeId, ()>::new();
    let mut index = HashMap::new();
    for node in &spec.nodes {
        index.entry(&node.id).or_insert_with(|| graph.add_node(&node.id));
    }
    let mut self_loops = HashSet::new();
    for dep in &spec.data_deps {
        if let (Some(&a), Some(&b)) = (index.get(&dep.source), index.get(&dep.target)) {
            graph.add_edge(a, b, ());
            if a == b {
                self_loops.insert(a);
            }
        }
    }
    let mut out: Vec<Vec<String>> = petgraph::algo::tarjan_scc(&graph)
        .into_iter()
        .filter(|scc| scc.len() > 1 || self_loops.contains(&scc[0]))
        .map(|scc| {
            let mut ids: Vec<String> = scc.into_iter().map(|i| graph[i].0.clone()).collect();
            ids.sort();
            ids
        })
        .collect();
    out.sort();
    out
}

/// Order nodes so every data dependency points forward; ties go to the
/// smaller node id.
pub fn topological_order(spec: &DataflowSpec) -> Result<Vec<NodeId>, ModelError> {
    let mut indegree: BTreeMap<&NodeId, usize> = spec.nodes.iter().map(|n| (&n.id, 0)).collect();
    let mut succ: HashMap<&NodeId, Vec<&NodeId>> = HashMap::new();
    for dep in &spec.data_deps {
        if !indegree.contains_key(&dep.source) || !indegree.contains_key(&dep.target) {
            return Err(ModelError::UnknownId(format!("{} -> {}", dep.source, dep.target)));
        }
        *indegree.get_mut(&dep.target).expect("checked") += 1;
        succ.entry(&dep.source).or_default().push(&dep.target);
    }
    let mut ready: BinaryHeap<Reverse<&NodeId>> =
        indegree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| Reverse(*id)).collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse(id)) = ready.pop() {
        order.push(id.clone());
        for next in succ.get(id).into_iter().flatten() {
            let d = indegree.get_mut(next).expect("checked");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(next));
            }
        }
    }
    if order.len() != indegree.len() {
        return Err(ModelError::NotADag);
    }
    Ok(order)
}

/// `n` plus everything reachable from it along data dependencies.
pub fn downstream_closure(spec: &DataflowSpec, n: &NodeId) -> Result<BTreeSet<NodeId>, ModelError> {
    if !spec.contains(n) {
        return Err(ModelError::UnknownId(n.0.clone()));
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([n.clone()]);
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id.clone()) {
            continue;
        }
        for dep in spec.data_deps.iter().filter(|d| d.source == id) {
            queue.push_back(dep.target.clone());
        }
    }
    Ok(seen)
}

/// `n` plus everything it reads from, transitively.
pub fn upstream_closure(spec: &DataflowSpec, n: &NodeId) -> Result<BTreeSet<NodeId>, ModelError> {
    if !spec.contains(n) {
        return Err(ModelError::UnknownId(n.0.clone()));
    }
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([n.clone()]);
    while let Some(id) = queue.pop_front() {
        if !seen.insert(id.clone()) {
            continue;
        }
        for dep in spec.data_deps.iter().filter(|d| d.target == id) {
            queue.push_back(dep.source.clone());
        }
    }
    Ok(seen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Edge {
    Data(DataDependency),
    Interaction(InteractionDependency),
}

/// One edit to a dataflow. Every accepted mutation becomes one provenance
/// transaction, and replaying the mutations in order rebuilds the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    AddNode {
        node: NodeSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rect: Option<CanvasRect>,
    },
    RemoveNode { id: NodeId },
    AddEdge { edge: Edge },
    /// Removes the data dependency between `source` and `target`, or the
    /// interaction dependency between the two endpoints.
    RemoveEdge { edge: Edge },
    UpdateCode { id: NodeId, code: String },
    SetWidgetValues {
        id: NodeId,
        #[serde(deserialize_with = "annotations::deserialize_values")]
        values: WidgetValues,
    },
    MoveNode { id: NodeId, rect: CanvasRect },
    SetPin { id: NodeId, pinned: bool },
    AddComment { id: NodeId, comment: Comment },
    /// Restore a node's code from a stored version; widget values reset.
    RestoreVersion { id: NodeId, version: ContentHash, code: String },
}

impl Mutation {
    pub fn name(&self) -> &'static str {
        match self {
            Mutation::AddNode { .. } => "add_node",
            Mutation::RemoveNode { .. } => "remove_node",
            Mutation::AddEdge { .. } => "add_edge",
            Mutation::RemoveEdge { .. } => "remove_edge",
            Mutation::UpdateCode { .. } => "update_code",
            Mutation::SetWidgetValues { .. } => "set_widget_values",
            Mutation::MoveNode { .. } => "move_node",
            Mutation::SetPin { .. } => "set_pin",
            Mutation::AddComment { .. } => "add_comment",
            Mutation::RestoreVersion { .. } => "restore_version",
        }
    }

    /// The node this mutation targets, if it targets exactly one.
    pub fn node_id(&self) -> Option<&NodeId> {
        match self {
            Mutation::AddNode { node, .. } => Some(&node.id),
            Mutation::RemoveNode { id }
            | Mutation::UpdateCode { id, .. }
            | Mutation::SetWidgetValues { id, .. }
            | Mutation::MoveNode { id, .. }
            | Mutation::SetPin { id, .. }
            | Mutation::AddComment { id, .. }
            | Mutation::RestoreVersion { id, .. } => Some(id),
            Mutation::AddEdge { .. } | Mutation::RemoveEdge { .. } => None,
        }
    }

    /// Whether the mutation changes what a node computes (as opposed to
    /// layout, pinning or comments).
    pub fn affects_execution(&self) -> bool {
        !matches!(self, Mutation::MoveNode { .. } | Mutation::SetPin { .. } | Mutation::AddComment { .. })
    }

    /// One-line human summary for transaction logs.
    pub fn summary(&self) -> String {
        match self {
            Mutation::AddEdge { edge: Edge::Data(d) } | Mutation::RemoveEdge { edge: Edge::Data(d) } => {
                format!("{} {} -> {}", self.name(), d.source, d.target)
            }
            Mutation::AddEdge { edge: Edge::Interaction(d) } | Mutation::RemoveEdge { edge: Edge::Interaction(d) } => {
                format!("{} {} <-> {}", self.name(), d.endpoint_a, d.endpoint_b)
            }
            other => format!("{} {}", other.name(), other.node_id().map(|n| n.0.as_str()).unwrap_or("")),
        }
    }
}

/// Apply `m` to `spec`, returning the new snapshot. Rejected mutations leave
/// nothing behind.
pub fn apply_mutation(spec: &DataflowSpec, m: &Mutation) -> Result<DataflowSpec, ModelError> {
    let mut next = spec.clone();
    match m {
        Mutation::AddNode { node, rect } => {
            if next.contains(&node.id) {
                return Err(ModelError::DuplicateId(node.id.0.clone()));
            }
            next.canvas.insert(node.id.clone(), rect.unwrap_or_default());
            next.nodes.push(node.clone());
        }
        Mutation::RemoveNode { id } => {
            if !next.contains(id) {
                return Err(ModelError::UnknownId(id.0.clone()));
            }
            next.nodes.retain(|n| n.id != *id);
            next.data_deps.retain(|d| d.source != *id && d.target != *id);
            next.interaction_deps.retain(|d| !d.touches(id));
            next.canvas.remove(id);
        }
        Mutation::AddEdge { edge: Edge::Data(dep) } => {
            for id in [&dep.source, &dep.target] {
                if !next.contains(id) {
                    return Err(ModelError::UnknownId(id.0.clone()));
                }
            }
            if let Some(path) = path_between(&next, &dep.target, &dep.source) {
                return Err(ModelError::WouldCreateCycle(path));
            }
            match next.data_deps.iter_mut().find(|d| d.source == dep.source && d.target == dep.target) {
                Some(existing) => existing.layer_slots.extend(dep.layer_slots.iter().copied()),
                None => next.data_deps.push(dep.clone()),
            }
        }
        Mutation::AddEdge { edge: Edge::Interaction(dep) } => {
            for id in [&dep.endpoint_a, &dep.endpoint_b] {
                if !next.contains(id) {
                    return Err(ModelError::UnknownId(id.0.clone()));
                }
            }
            if next.interaction_deps.iter().any(|d| d.same_pair(dep)) {
                return Err(ModelError::DuplicateId(format!("{} <-> {}", dep.endpoint_a, dep.endpoint_b)));
            }
            next.interaction_deps.push(dep.clone());
        }
        Mutation::RemoveEdge { edge: Edge::Data(dep) } => {
            let before = next.data_deps.len();
            next.data_deps.retain(|d| !(d.source == dep.source && d.target == dep.target));
            if next.data_deps.len() == before {
                return Err(ModelError::UnknownId(format!("{} -> {}", dep.source, dep.target)));
            }
            // Interaction dependencies cannot outlive the data dependency they ride on.
            let still_linked = |a: &NodeId, b: &NodeId, deps: &[DataDependency]| {
                deps.iter().any(|d| (d.source == *a && d.target == *b) || (d.source == *b && d.target == *a))
            };
            let data = next.data_deps.clone();
            next.interaction_deps.retain(|i| still_linked(&i.endpoint_a, &i.endpoint_b, &data));
        }
        Mutation::RemoveEdge { edge: Edge::Interaction(dep) } => {
            let before = next.interaction_deps.len();
            next.interaction_deps.retain(|d| !d.same_pair(dep));
            if next.interaction_deps.len() == before {
                return Err(ModelError::UnknownId(format!("{} <-> {}", dep.endpoint_a, dep.endpoint_b)));
            }
        }
        Mutation::UpdateCode { id, code } => {
            let node = next.node_mut(id)?;
            node.widget_values = annotations::retain_valid_values(code, &node.widget_values);
            node.canonical_code = code.clone();
        }
        Mutation::SetWidgetValues { id, values } => {
            let node = next.node_mut(id)?;
            let sites = annotations::parse_annotations(&node.canonical_code)
                .map_err(|e| ModelError::InvalidWidgetValue(e.to_string()))?;
            annotations::check_values(&sites, values).map_err(|e| ModelError::InvalidWidgetValue(e.to_string()))?;
            node.widget_values = values.clone();
        }
        Mutation::MoveNode { id, rect } => {
            if !next.contains(id) {
                return Err(ModelError::UnknownId(id.0.clone()));
            }
            next.canvas.insert(id.clone(), *rect);
        }
        Mutation::SetPin { id, pinned } => next.node_mut(id)?.pinned = *pinned,
        Mutation::AddComment { id, comment } => {
            if comment.text.trim().is_empty() {
                return Err(ModelError::Invalid("empty comment".into()));
            }
            next.node_mut(id)?.comments.push(comment.clone());
        }
        Mutation::RestoreVersion { id, code, .. } => {
            let node = next.node_mut(id)?;
            node.canonical_code = code.clone();
            node.widget_values.clear();
        }
    }
    let report = validate(&next);
    if let Some(v) = report.violations.first() {
        return Err(match v.code {
            ViolationCode::Cycle => ModelError::WouldCreateCycle(v.involved.clone()),
            ViolationCode::PortConflict => ModelError::PortConflict(v.detail.clone()),
            ViolationCode::LayerKindMismatch => ModelError::LayerKindMismatch(v.detail.clone()),
            ViolationCode::DanglingRef => ModelError::UnknownId(v.detail.clone()),
            ViolationCode::DuplicateId => ModelError::DuplicateId(v.detail.clone()),
            _ => ModelError::Invalid(v.detail.clone()),
        });
    }
    Ok(next)
}

/// A data path `from ~> to`, if one exists.
fn path_between(spec: &DataflowSpec, from: &NodeId, to: &NodeId) -> Option<Vec<String>> {
    let mut parent: HashMap<&NodeId, &NodeId> = HashMap::new();
    let mut queue = VecDeque::from([from]);
    let mut seen = HashSet::from([from]);
    while let Some(id) = queue.pop_front() {
        if id == to {
            let mut path = vec![id.0.clone()];
            let mut cur = id;
            while let Some(p) = parent.get(cur) {
                path.push(p.0.clone());
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        for dep in spec.data_deps.iter().filter(|d| d.source == *id) {
            if seen.insert(&dep.target) {
                parent.insert(&dep.target, id);
                queue.push_back(&dep.target);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: &str) -> NodeSpec {
        NodeSpec::new(id, NodeKind::Transform, "t", "", vec![PortKinds::any(); 2], vec![PortKinds::any()])
    }

    fn spec(ids: &[&str], edges: &[(&str, &str)]) -> DataflowSpec {
        let mut s = DataflowSpec::empty("df", "test");
        s.nodes = ids.iter().map(|i| node(i)).collect();
        s.data_deps = edges.iter().map(|(a, b)| DataDependency::new(*a, *b)).collect();
        s
    }

    #[test]
    fn empty_spec_is_valid() {
        let r = validate(&DataflowSpec::empty("x", "x"));
        assert!(r.ok && r.violations.is_empty());
    }

    #[test]
    fn three_cycle_is_one_violation() {
        let mut s = spec(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        s.data_deps.push(DataDependency::with_slot("C", "A", 0, 1));
        let r = validate(&s);
        let cycles: Vec<_> = r.violations.iter().filter(|v| v.code == ViolationCode::Cycle).collect();
        assert_eq!(cycles.len(), 1);
        assert_eq!(cycles[0].involved, ["A", "B", "C"]);
    }

    #[test]
    fn interaction_dep_needs_data_dep() {
        let mut s = DataflowSpec::empty("x", "x");
        s.nodes.push(NodeSpec::interaction("I", 1));
        s.nodes.push(NodeSpec::new("V", NodeKind::Visualization, "chart", "{}", vec![PortKinds::any()], vec![PortKinds::any()]));
        s.interaction_deps.push(InteractionDependency { endpoint_a: "I".into(), endpoint_b: "V".into(), link: None });
        let r = validate(&s);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].code, ViolationCode::MissingDataDep);
        s.data_deps.push(DataDependency::new("I", "V"));
        assert!(validate(&s).ok);
    }

    #[test]
    fn back_edge_is_rejected() {
        let s = spec(&["A", "B"], &[("A", "B")]);
        let err = apply_mutation(&s, &Mutation::AddEdge { edge: Edge::Data(DataDependency::with_slot("B", "A", 0, 1)) })
            .unwrap_err();
        assert!(matches!(err, ModelError::WouldCreateCycle(_)));
    }

    #[test]
    fn remove_node_cascades() {
        let s = spec(&["A", "B"], &[("A", "B")]);
        let s = apply_mutation(&s, &Mutation::RemoveNode { id: "A".into() }).unwrap();
        assert_eq!(s.nodes.len(), 1);
        assert!(s.data_deps.is_empty());
    }

    #[test]
    fn update_code_replaces_text() {
        let s = spec(&["X"], &[]);
        let s = apply_mutation(&s, &Mutation::UpdateCode { id: "X".into(), code: "T".into() }).unwrap();
        assert_eq!(s.node(&"X".into()).unwrap().canonical_code, "T");
    }

    #[test]
    fn second_binding_of_an_input_port_conflicts() {
        let s = spec(&["A", "B", "C"], &[("A", "C")]);
        let err = apply_mutation(&s, &Mutation::AddEdge { edge: Edge::Data(DataDependency::new("B", "C")) }).unwrap_err();
        assert!(matches!(err, ModelError::PortConflict(_)));
    }

    #[test]
    fn port_kinds_must_overlap() {
        let mut s = DataflowSpec::empty("x", "x");
        s.nodes.push(NodeSpec::new("L", NodeKind::Loader, "l", "", vec![], vec![PortKinds::of(&[LayerKind::Table])]));
        s.nodes.push(NodeSpec::new("J", NodeKind::Transform, "j", "", vec![PortKinds::of(&[LayerKind::Mesh2d])], vec![]));
        s.data_deps.push(DataDependency::new("L", "J"));
        assert!(validate(&s).has(ViolationCode::LayerKindMismatch));
    }

    #[test]
    fn topo_order_breaks_ties_by_id() {
        let s = spec(&["D", "C", "B", "A"], &[("A", "B"), ("A", "C"), ("B", "D")]);
        let mut s = s;
        s.data_deps.push(DataDependency::with_slot("C", "D", 0, 1));
        let order: Vec<String> = topological_order(&s).unwrap().into_iter().map(|n| n.0).collect();
        assert_eq!(order, ["A", "B", "C", "D"]);
        let single = spec(&["only"], &[]);
        assert_eq!(topological_order(&single).unwrap(), vec![NodeId::from("only")]);
    }

    #[test]
    fn closure_of_chain() {
        let s = spec(&["A", "B", "C"], &[("A", "B"), ("B", "C")]);
        let c: Vec<String> = downstream_closure(&s, &"B".into()).unwrap().into_iter().map(|n| n.0).collect();
        assert_eq!(c, ["B", "C"]);
        assert_eq!(downstream_closure(&s, &"C".into()).unwrap().len(), 1);
        assert!(matches!(downstream_closure(&s, &"Z".into()), Err(ModelError::UnknownId(_))));
    }

    #[test]
    fn canonical_bytes_round_trip() {
        let mut s = spec(&["A", "B"], &[("A", "B")]);
        s.nodes[0].widget_values.insert(0, crate::annotations::WidgetValue::Bool(true));
        s.nodes[0].canonical_code = "$[checkbox,C,false]".into();
        let bytes = s.to_canonical_bytes();
        let back = DataflowSpec::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_canonical_bytes(), bytes);
    }

    #[test]
    fn mutations_with_widget_values_round_trip_through_json() {
        let mut node = spec(&["A"], &[]).nodes[0].clone();
        node.widget_values.insert(0, crate::annotations::WidgetValue::Number(3.0));
        let values = node.widget_values.clone();
        for m in [Mutation::AddNode { node, rect: None }, Mutation::SetWidgetValues { id: "A".into(), values }] {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Mutation>(&json).unwrap(), m);
        }
    }
}
