//! Node scheduling, content-addressed output caching and execution records.

mod executor;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use chrono::Utc;
use parking_lot::RwLock;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{render, AnnotationError, WidgetValues};
use crate::canonical::{to_canonical_vec, ContentHash};
use crate::interaction::{augment, InteractionError, SelectionState};
use crate::layers::{deserialize_layer, DataLayer, LayerKind};
use crate::model::{downstream_closure, topological_order, upstream_closure, validate, DataflowSpec, NodeId, NodeKind, NodeSpec};
use crate::provenance::{ExecStatus, ExecutionKind, ExecutionRecord, ProvError, ProvenanceStore, Table};

pub use executor::{
    decode_reply, encode_request, is_view_code, write_frame, BuiltinExecutor, ExecOutput, Executor, ProcessExecutor, DEFAULT_OUTPUT_CAP,
    DEFAULT_TIMEOUT,
};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", content = "detail", rename_all = "snake_case")]
pub enum RunError {
    #[error("dataflow is invalid: {0:?}")]
    InvalidSpec(Vec<String>),
    #[error("unknown node {0}")]
    UnknownId(NodeId),
    #[error("upstream node {0} failed")]
    UpstreamFailed(NodeId),
    #[error("executor error: {0}")]
    ExecutorError(String),
    #[error("expected {expected} layers, got {found}")]
    PortArityMismatch { expected: usize, found: usize },
    #[error("output port {port} cannot carry a {kind} layer")]
    OutputKindMismatch { port: usize, kind: LayerKind },
    #[error("{0}")]
    Annotation(String),
    #[error("{0}")]
    Interaction(String),
    #[error("{0}")]
    Provenance(String),
}

impl From<ProvError> for RunError {
    fn from(e: ProvError) -> Self {
        RunError::Provenance(e.to_string())
    }
}

impl From<AnnotationError> for RunError {
    fn from(e: AnnotationError) -> Self {
        RunError::Annotation(e.to_string())
    }
}

impl From<InteractionError> for RunError {
    fn from(e: InteractionError) -> Self {
        RunError::Interaction(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Error,
    SkippedCached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRunResult {
    pub node_id: NodeId,
    pub status: RunStatus,
    pub outputs: Vec<ContentHash>,
    pub log: String,
    pub duration_ms: u64,
    pub cache_hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_key: Option<ContentHash>,
}

impl NodeRunResult {
    pub fn succeeded(&self) -> bool {
        self.status != RunStatus::Error
    }
}

/// Hash identifying a node computation: template, substituted code and input
/// hashes in port order. Canvas placement, comments and pinning are not part
/// of it.
pub fn cache_key(node: &NodeSpec, input_hashes: &[ContentHash], values: &WidgetValues) -> Result<ContentHash, AnnotationError> {
    let code = render(&node.canonical_code, values)?;
    Ok(key_of(&node.template_id, &code, input_hashes))
}

fn key_of(template_id: &str, code: &str, inputs: &[ContentHash]) -> ContentHash {
    let mut parts: Vec<&[u8]> = vec![b"cache/1", template_id.as_bytes(), code.as_bytes()];
    parts.extend(inputs.iter().map(|h| h.as_str().as_bytes()));
    ContentHash::of_parts(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Independent nodes of the same depth run concurrently.
    Parallel,
    Serial,
}

/// Per-call inputs that are not part of the dataflow.
pub struct RunContext<'a> {
    pub user: &'a str,
    pub selections: &'a BTreeMap<NodeId, SelectionState>,
    /// Recompute even when a cached result exists.
    pub bypass_cache: bool,
}

impl<'a> RunContext<'a> {
    pub fn new(user: &'a str, selections: &'a BTreeMap<NodeId, SelectionState>) -> Self {
        RunContext { user, selections, bypass_cache: false }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    outputs: Vec<ContentHash>,
    log: String,
}

#[derive(Debug, Clone)]
struct Latest {
    key: Option<ContentHash>,
    outputs: Vec<ContentHash>,
}

type Outcome = Result<Vec<Arc<DataLayer>>, ()>;

/// Execution engine of one workspace.
pub struct Engine {
    prov: Arc<ProvenanceStore>,
    builtin: Arc<dyn Executor>,
    executors: RwLock<HashMap<NodeKind, Arc<dyn Executor>>>,
    layers: RwLock<HashMap<ContentHash, Arc<DataLayer>>>,
    latest: RwLock<HashMap<NodeId, Latest>>,
    stale: RwLock<BTreeSet<NodeId>>,
    invocations: AtomicU64,
    schedule: Schedule,
}

impl Engine {
    pub fn new(prov: Arc<ProvenanceStore>, builtin: Arc<dyn Executor>) -> Self {
        Engine {
            prov,
            builtin,
            executors: RwLock::new(HashMap::new()),
            layers: RwLock::new(HashMap::new()),
            latest: RwLock::new(HashMap::new()),
            stale: RwLock::new(BTreeSet::new()),
            invocations: AtomicU64::new(0),
            schedule: Schedule::Parallel,
        }
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Route nodes of `kind` to `executor` instead of the built-in one.
    pub fn set_executor(&self, kind: NodeKind, executor: Arc<dyn Executor>) {
        self.executors.write().insert(kind, executor);
    }

    pub fn provenance(&self) -> &Arc<ProvenanceStore> {
        &self.prov
    }

    /// Number of executor invocations so far (cache hits excluded).
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    fn executor_for(&self, kind: NodeKind) -> Arc<dyn Executor> {
        self.executors.read().get(&kind).cloned().unwrap_or_else(|| self.builtin.clone())
    }

    /// A stored layer by content hash.
    pub fn layer(&self, hash: &ContentHash) -> Option<Arc<DataLayer>> {
        if let Some(l) = self.layers.read().get(hash) {
            return Some(l.clone());
        }
        let bytes = self.prov.layer_envelope(hash).ok()??;
        let layer = Arc::new(deserialize_layer(&bytes).ok()?);
        self.layers.write().insert(hash.clone(), layer.clone());
        Some(layer)
    }

    fn keep(&self, layer: DataLayer) -> Result<(ContentHash, Arc<DataLayer>), RunError> {
        let hash = layer.content_hash();
        self.prov.record_layer(&layer)?;
        let layer = Arc::new(layer);
        self.layers.write().entry(hash.clone()).or_insert_with(|| layer.clone());
        Ok((hash, layer))
    }

    /// Output hashes of the node's latest successful run.
    pub fn outputs_of(&self, node: &NodeId) -> Option<Vec<ContentHash>> {
        self.latest.read().get(node).map(|l| l.outputs.clone())
    }

    /// Nodes whose results predate an upstream edit.
    pub fn stale(&self) -> BTreeSet<NodeId> {
        self.stale.read().clone()
    }

    pub fn is_stale(&self, node: &NodeId) -> bool {
        self.stale.read().contains(node)
    }

    /// Mark `n` and everything downstream of it stale.
    pub fn invalidate(&self, spec: &DataflowSpec, n: &NodeId) -> Result<BTreeSet<NodeId>, RunError> {
        let closure = downstream_closure(spec, n).map_err(|_| RunError::UnknownId(n.clone()))?;
        self.stale.write().extend(closure.iter().cloned());
        Ok(closure)
    }

    /// Drop bookkeeping for nodes that no longer exist.
    pub fn forget(&self, node: &NodeId) {
        self.latest.write().remove(node);
        self.stale.write().remove(node);
    }

    fn check_valid(spec: &DataflowSpec) -> Result<(), RunError> {
        let report = validate(spec);
        if report.ok {
            Ok(())
        } else {
            Err(RunError::InvalidSpec(report.violations.iter().map(|v| format!("{:?}", v.code)).collect()))
        }
    }

    /// Run one node, first bringing its upstream up to date. Upstream nodes
    /// whose latest result still matches are reused without a new record.
    pub fn run_node(&self, spec: &DataflowSpec, n: &NodeId, ctx: &RunContext<'_>) -> Result<NodeRunResult, RunError> {
        let avail = self.prepare_upstream(spec, n, ctx)?;
        let node = spec.node(n).ok_or_else(|| RunError::UnknownId(n.clone()))?;
        Ok(self.run_one(spec, node, &avail, ctx, None).1)
    }

    fn prepare_upstream(&self, spec: &DataflowSpec, n: &NodeId, ctx: &RunContext<'_>) -> Result<HashMap<NodeId, Outcome>, RunError> {
        Self::check_valid(spec)?;
        let upstream = upstream_closure(spec, n).map_err(|_| RunError::UnknownId(n.clone()))?;
        let order = topological_order(spec).map_err(|e| RunError::InvalidSpec(vec![e.to_string()]))?;
        let mut avail: HashMap<NodeId, Outcome> = HashMap::new();
        for u in order.iter().filter(|u| upstream.contains(*u) && *u != n) {
            let node = spec.node(u).expect("ordered ids exist");
            let outcome = match self.reuse(spec, node, &avail, ctx) {
                Some(layers) => Ok(layers),
                None => self.run_one(spec, node, &avail, ctx, None).0,
            };
            avail.insert(u.clone(), outcome);
        }
        Ok(avail)
    }

    /// The layers arriving at `n`'s input ports, running stale upstream
    /// nodes as needed.
    pub fn input_layers(&self, spec: &DataflowSpec, n: &NodeId, ctx: &RunContext<'_>) -> Result<Vec<Arc<DataLayer>>, RunError> {
        let avail = self.prepare_upstream(spec, n, ctx)?;
        let node = spec.node(n).ok_or_else(|| RunError::UnknownId(n.clone()))?;
        self.gather(spec, node, &avail)
    }

    /// Latest outputs of `node` if they still match its inputs and code.
    fn reuse(&self, spec: &DataflowSpec, node: &NodeSpec, avail: &HashMap<NodeId, Outcome>, ctx: &RunContext<'_>) -> Option<Vec<Arc<DataLayer>>> {
        if ctx.bypass_cache || self.is_stale(&node.id) {
            return None;
        }
        let inputs = self.gather(spec, node, avail).ok()?;
        if node.kind == NodeKind::Interaction {
            return self.interact(node, &inputs, ctx).ok();
        }
        let hashes: Vec<ContentHash> = inputs.iter().map(|l| l.content_hash()).collect();
        let key = cache_key(node, &hashes, &node.widget_values).ok()?;
        let latest = self.latest.read().get(&node.id).cloned()?;
        if latest.key.as_ref() != Some(&key) {
            return None;
        }
        latest.outputs.iter().map(|h| self.layer(h)).collect()
    }

    /// Run every node in topological order; independent nodes may run
    /// concurrently. Per-node failures are reported in the results and
    /// poison downstream nodes.
    pub fn run_dataflow(&self, spec: &DataflowSpec, ctx: &RunContext<'_>) -> Result<Vec<NodeRunResult>, RunError> {
        Self::check_valid(spec)?;
        let order = topological_order(spec).map_err(|e| RunError::InvalidSpec(vec![e.to_string()]))?;
        if order.is_empty() {
            return Ok(Vec::new());
        }
        let started = Utc::now();
        let tx_seq = self.prov.tx_count().saturating_sub(1);
        let dataflow_version = spec.content_hash();
        let mut record = self.prov.record_execution(ExecutionRecord {
            seq: 0,
            kind: ExecutionKind::Dataflow,
            dataflow_version,
            tx_seq,
            node_id: None,
            node_version: None,
            consumed: vec![],
            produced: vec![],
            cached: false,
            status: ExecStatus::Ok,
            log: String::new(),
            parent: None,
            started,
            ended: started,
            user: ctx.user.to_string(),
        })?;

        let waves: Vec<Vec<NodeId>> = match self.schedule {
            Schedule::Serial => order.iter().map(|n| vec![n.clone()]).collect(),
            Schedule::Parallel => levels(spec, &order),
        };
        let mut avail: HashMap<NodeId, Outcome> = HashMap::new();
        let mut results: HashMap<NodeId, NodeRunResult> = HashMap::new();
        for wave in waves {
            let done: Vec<(NodeId, Outcome, NodeRunResult)> = wave
                .par_iter()
                .map(|id| {
                    let node = spec.node(id).expect("ordered ids exist");
                    let (outcome, result) = self.run_one(spec, node, &avail, ctx, Some(record.seq));
                    (id.clone(), outcome, result)
                })
                .collect();
            for (id, outcome, result) in done {
                avail.insert(id.clone(), outcome);
                results.insert(id, result);
            }
        }
        let ordered: Vec<NodeRunResult> = order.iter().map(|n| results.remove(n).expect("every node ran")).collect();

        record.ended = Utc::now();
        if ordered.iter().any(|r| !r.succeeded()) {
            record.status = ExecStatus::Error;
        }
        record.produced = ordered.iter().flat_map(|r| r.outputs.iter().cloned()).collect::<BTreeSet<_>>().into_iter().collect();
        self.prov.update_execution(&record)?;
        Ok(ordered)
    }

    /// Input layers in port order.
    fn gather(&self, spec: &DataflowSpec, node: &NodeSpec, avail: &HashMap<NodeId, Outcome>) -> Result<Vec<Arc<DataLayer>>, RunError> {
        let feeds = spec.inputs_of(&node.id);
        let mut inputs = Vec::with_capacity(feeds.len());
        for (port, (input, source, output)) in feeds.iter().enumerate() {
            if *input != port {
                return Err(RunError::PortArityMismatch { expected: node.ports_in.len(), found: feeds.len() });
            }
            let layers = match avail.get(*source) {
                Some(Ok(layers)) => layers,
                Some(Err(())) | None => return Err(RunError::UpstreamFailed((*source).clone())),
            };
            let layer = layers
                .get(*output)
                .ok_or(RunError::PortArityMismatch { expected: output + 1, found: layers.len() })?;
            inputs.push(layer.clone());
        }
        if inputs.len() != node.ports_in.len() {
            return Err(RunError::PortArityMismatch { expected: node.ports_in.len(), found: inputs.len() });
        }
        Ok(inputs)
    }

    fn interact(&self, node: &NodeSpec, inputs: &[Arc<DataLayer>], ctx: &RunContext<'_>) -> Result<Vec<Arc<DataLayer>>, RunError> {
        let empty = SelectionState::new(node.id.clone());
        let state = ctx.selections.get(&node.id).unwrap_or(&empty);
        let mut out = inputs.to_vec();
        if let Some(first) = inputs.first() {
            out[0] = Arc::new(augment(first, state)?);
        }
        Ok(out)
    }

    /// Execute one node and record it. Returns the outcome for downstream
    /// nodes and the reported result.
    fn run_one(
        &self,
        spec: &DataflowSpec,
        node: &NodeSpec,
        avail: &HashMap<NodeId, Outcome>,
        ctx: &RunContext<'_>,
        parent: Option<u64>,
    ) -> (Outcome, NodeRunResult) {
        let clock = Instant::now();
        let started = Utc::now();
        let inputs = self.gather(spec, node, avail);
        let consumed: Vec<ContentHash> = inputs.as_ref().map(|ls| ls.iter().map(|l| l.content_hash()).collect()).unwrap_or_default();
        let attempt = inputs.and_then(|inputs| self.compute(node, &inputs, &consumed, ctx));

        let (outcome, mut result) = match attempt {
            Ok(done) => {
                let status = if done.cache_hit { RunStatus::SkippedCached } else { RunStatus::Ok };
                let result = NodeRunResult {
                    node_id: node.id.clone(),
                    status,
                    outputs: done.hashes.clone(),
                    log: done.log,
                    duration_ms: 0,
                    cache_hit: done.cache_hit,
                    error: None,
                    cache_key: done.key.clone(),
                };
                self.latest.write().insert(node.id.clone(), Latest { key: done.key, outputs: done.hashes });
                self.stale.write().remove(&node.id);
                (Ok(done.layers), result)
            }
            Err(error) => {
                let log = error.to_string();
                let result = NodeRunResult {
                    node_id: node.id.clone(),
                    status: RunStatus::Error,
                    outputs: vec![],
                    log,
                    duration_ms: 0,
                    cache_hit: false,
                    error: Some(error),
                    cache_key: None,
                };
                (Err(()), result)
            }
        };
        result.duration_ms = clock.elapsed().as_millis() as u64;

        let recorded = self.prov.version_for_run(node).and_then(|version| {
            self.prov.record_execution(ExecutionRecord {
                seq: 0,
                kind: ExecutionKind::Node,
                dataflow_version: spec.content_hash(),
                tx_seq: self.prov.tx_count().saturating_sub(1),
                node_id: Some(node.id.clone()),
                node_version: Some(version),
                consumed,
                produced: result.outputs.clone(),
                cached: result.cache_hit,
                status: if result.succeeded() { ExecStatus::Ok } else { ExecStatus::Error },
                log: result.log.clone(),
                parent,
                started,
                ended: Utc::now(),
                user: ctx.user.to_string(),
            })
        });
        if let Err(e) = recorded {
            result.status = RunStatus::Error;
            result.error = Some(e.into());
            return (Err(()), result);
        }
        (outcome, result)
    }

    fn compute(&self, node: &NodeSpec, inputs: &[Arc<DataLayer>], consumed: &[ContentHash], ctx: &RunContext<'_>) -> Result<Computed, RunError> {
        if node.kind == NodeKind::Interaction {
            let layers = self.interact(node, inputs, ctx)?;
            let mut hashes = Vec::with_capacity(layers.len());
            for l in &layers {
                hashes.push(self.keep((**l).clone())?.0);
            }
            return Ok(Computed { layers, hashes, log: String::new(), cache_hit: false, key: None });
        }

        let code = render(&node.canonical_code, &node.widget_values)?;
        let key = key_of(&node.template_id, &code, consumed);
        if !ctx.bypass_cache {
            if let Some(hit) = self.lookup(&key) {
                return Ok(Computed { key: Some(key), ..hit });
            }
        }

        self.invocations.fetch_add(1, Ordering::SeqCst);
        let out = self.executor_for(node.kind).execute(&code, inputs).map_err(RunError::ExecutorError)?;
        if out.layers.len() != node.ports_out.len() {
            return Err(RunError::PortArityMismatch { expected: node.ports_out.len(), found: out.layers.len() });
        }
        for (port, (l, kinds)) in out.layers.iter().zip(&node.ports_out).enumerate() {
            if !kinds.accepts(l.kind()) {
                return Err(RunError::OutputKindMismatch { port, kind: l.kind() });
            }
        }
        let mut layers = Vec::with_capacity(out.layers.len());
        let mut hashes = Vec::with_capacity(out.layers.len());
        for l in out.layers {
            let (h, l) = self.keep(l)?;
            hashes.push(h);
            layers.push(l);
        }
        let entry = CacheEntry { outputs: hashes.clone(), log: out.log.clone() };
        self.prov.storage().put(Table::CacheIndex, key.as_str().as_bytes(), &to_canonical_vec(&entry)).map_err(ProvError::from)?;
        Ok(Computed { layers, hashes, log: out.log, cache_hit: false, key: Some(key) })
    }

    fn lookup(&self, key: &ContentHash) -> Option<Computed> {
        let bytes = self.prov.storage().get(Table::CacheIndex, key.as_str().as_bytes()).ok()??;
        let entry: CacheEntry = serde_json::from_slice(&bytes).ok()?;
        let layers: Vec<Arc<DataLayer>> = entry.outputs.iter().map(|h| self.layer(h)).collect::<Option<_>>()?;
        Some(Computed { layers, hashes: entry.outputs, log: entry.log, cache_hit: true, key: None })
    }
}

struct Computed {
    layers: Vec<Arc<DataLayer>>,
    hashes: Vec<ContentHash>,
    log: String,
    cache_hit: bool,
    key: Option<ContentHash>,
}

/// Group nodes by depth: a node's depth exceeds that of all its sources.
fn levels(spec: &DataflowSpec, order: &[NodeId]) -> Vec<Vec<NodeId>> {
    let mut depth: HashMap<&NodeId, usize> = HashMap::new();
    let mut waves: Vec<Vec<NodeId>> = Vec::new();
    for n in order {
        let d = spec.inputs_of(n).iter().map(|(_, s, _)| depth[*s] + 1).max().unwrap_or(0);
        depth.insert(n, d);
        if waves.len() <= d {
            waves.resize(d + 1, Vec::new());
        }
        waves[d].push(n.clone());
    }
    waves
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_mutation, CanvasRect, DataDependency, Mutation, PortKinds};

    fn node(id: &str, code: &str, ins: usize) -> NodeSpec {
        NodeSpec::new(id, NodeKind::Transform, "t", code, vec![PortKinds::any(); ins], vec![PortKinds::any()])
    }

    fn chain() -> DataflowSpec {
        let mut s = DataflowSpec::empty("w", "chain");
        s.nodes.push(NodeSpec::new("A", NodeKind::Loader, "l", r#"{"op":"load_csv","data":"k,v\na,1\na,1\nb,2\n"}"#, vec![], vec![PortKinds::any()]));
        s.nodes.push(node("B", r#"{"op":"remove_duplicates"}"#, 1));
        s.nodes.push(node("C", r#"{"op":"scale","column":"v","factor":$[slider,f,0,10,1,2]}"#, 1));
        s.data_deps.push(DataDependency::new("A", "B"));
        s.data_deps.push(DataDependency::new("B", "C"));
        s
    }

    fn engine() -> Engine {
        Engine::new(Arc::new(ProvenanceStore::in_memory("w")), Arc::new(BuiltinExecutor::default()))
    }

    #[test]
    fn second_run_hits_cache() {
        let e = engine();
        let sel = BTreeMap::new();
        let ctx = RunContext::new("u", &sel);
        let spec = chain();
        let first = e.run_node(&spec, &"A".into(), &ctx).unwrap();
        assert!(!first.cache_hit);
        let second = e.run_node(&spec, &"A".into(), &ctx).unwrap();
        assert!(second.cache_hit);
        assert_eq!(second.status, RunStatus::SkippedCached);
        assert_eq!(e.invocations(), 1);
        assert_eq!(first.outputs, second.outputs);
    }

    #[test]
    fn run_node_runs_upstream_first() {
        let e = engine();
        let sel = BTreeMap::new();
        let r = e.run_node(&chain(), &"C".into(), &RunContext::new("u", &sel)).unwrap();
        assert_eq!(r.status, RunStatus::Ok);
        let out = e.layer(&r.outputs[0]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.records()[0][1], crate::layers::Value::Number(2.0));
        assert_eq!(e.invocations(), 3);
    }

    #[test]
    fn cache_key_ignores_layout_and_sees_widgets() {
        let spec = chain();
        let c = spec.node(&"C".into()).unwrap().clone();
        let k0 = cache_key(&c, &[], &c.widget_values).unwrap();
        let moved = apply_mutation(&spec, &Mutation::MoveNode { id: "C".into(), rect: CanvasRect { x: 9.0, y: 9.0, w: 1.0, h: 1.0, collapsed: false } }).unwrap();
        assert_eq!(cache_key(moved.node(&"C".into()).unwrap(), &[], &c.widget_values).unwrap(), k0);
        let mut values = WidgetValues::new();
        values.insert(0, crate::annotations::WidgetValue::Number(3.0));
        assert_ne!(cache_key(&c, &[], &values).unwrap(), k0);
        let a = ContentHash::of(b"a");
        let b = ContentHash::of(b"b");
        assert_ne!(cache_key(&c, &[a.clone(), b.clone()], &values).unwrap(), cache_key(&c, &[b, a], &values).unwrap());
    }

    #[test]
    fn errors_poison_downstream() {
        let mut spec = chain();
        spec.nodes[0].canonical_code = r#"{"op":"load_csv","data":"k,v\na\n"}"#.into();
        let e = engine();
        let sel = BTreeMap::new();
        let results = e.run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].status, RunStatus::Error);
        assert_eq!(results[1].error, Some(RunError::UpstreamFailed("A".into())));
        assert_eq!(results[2].error, Some(RunError::UpstreamFailed("B".into())));
    }

    #[test]
    fn invalidate_marks_downstream_until_rerun() {
        let e = engine();
        let spec = chain();
        let sel = BTreeMap::new();
        e.run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
        let stale = e.invalidate(&spec, &"B".into()).unwrap();
        assert_eq!(stale, ["B".into(), "C".into()].into_iter().collect());
        assert_eq!(e.invalidate(&spec, &"C".into()).unwrap().len(), 1);
        e.run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
        assert!(e.stale().is_empty());
        assert!(matches!(e.invalidate(&spec, &"Z".into()), Err(RunError::UnknownId(_))));
    }

    #[test]
    fn every_node_run_is_recorded_once() {
        let e = engine();
        let sel = BTreeMap::new();
        let ctx = RunContext::new("u", &sel);
        let spec = chain();
        e.run_dataflow(&spec, &ctx).unwrap();
        e.run_node(&spec, &"C".into(), &ctx).unwrap();
        let recs = e.provenance().executions().unwrap();
        let node_recs = recs.iter().filter(|r| r.kind == ExecutionKind::Node).count();
        assert_eq!(node_recs, 4);
        assert_eq!(recs.iter().filter(|r| r.kind == ExecutionKind::Dataflow).count(), 1);
        assert!(recs.iter().filter(|r| r.kind == ExecutionKind::Node).take(3).all(|r| r.parent == Some(0)));
    }

    #[test]
    fn serial_and_parallel_agree() {
        let mut spec = chain();
        spec.nodes.push(node("D", r#"{"op":"scale","column":"v","factor":5}"#, 1));
        spec.data_deps.push(DataDependency::new("A", "D"));
        let sel = BTreeMap::new();
        let par = engine().run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
        let ser = engine().with_schedule(Schedule::Serial).run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
        let hashes = |rs: &[NodeRunResult]| rs.iter().map(|r| (r.node_id.clone(), r.outputs.clone())).collect::<Vec<_>>();
        assert_eq!(hashes(&par), hashes(&ser));
    }

    #[test]
    fn interaction_outputs_carry_selection() {
        let mut spec = chain();
        spec.nodes.push(NodeSpec::interaction("I", 1));
        spec.data_deps.push(DataDependency::new("B", "I"));
        let mut sel = BTreeMap::new();
        let mut st = SelectionState::new("I");
        st.selected.insert(1);
        sel.insert(NodeId::from("I"), st);
        let e = engine();
        let r = e.run_node(&spec, &"I".into(), &RunContext::new("u", &sel)).unwrap();
        let out = e.layer(&r.outputs[0]).unwrap();
        assert_eq!(out.records()[1].last(), Some(&crate::layers::Value::Bool(true)));
    }
}
