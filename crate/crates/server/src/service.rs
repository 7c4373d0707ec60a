//! Workspace service state and operations, independent of HTTP.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};
use tokio::sync::Notify;

use urbanflow::annotations::render;
use urbanflow::canonical::{to_canonical_vec, ContentHash};
use urbanflow::engine::{is_view_code, Engine, ExecOutput, Executor, BuiltinExecutor, NodeRunResult, ProcessExecutor, RunContext, RunError};
use urbanflow::interaction::{apply_selection, propagate, LinkSpec, SelectionMode, SelectionState};
use urbanflow::layers::{serialize_layer, DataLayer};
use urbanflow::model::{apply_mutation, CanvasRect, Comment, DataflowSpec, Edge, ModelError, Mutation, NodeId, NodeKind};
use urbanflow::ops::{NodeTemplate, OpDoc, TemplateError, TemplateRegistry};
use urbanflow::provenance::{
    export_prov, MemoryStorage, ProvError, ProvenanceStore, RedbStorage, Storage, Table, Transaction, VersionTree,
    DEFAULT_CAPTURE_ROW_LIMIT,
};
use urbanflow::views::{render_view, ViewDescriptor};

/// Longest a poll may wait.
pub const MAX_POLL: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct Config {
    /// Root for loader paths and the template registry file.
    pub data_dir: Option<PathBuf>,
    /// Embedded database file; memory only when absent.
    pub db_path: Option<PathBuf>,
    pub exec_timeout: Duration,
    pub capture_row_limit: usize,
    /// Worker program for node code that is not an op document.
    pub worker: Option<Vec<String>>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data_dir: None,
            db_path: None,
            exec_timeout: urbanflow::engine::DEFAULT_TIMEOUT,
            capture_row_limit: DEFAULT_CAPTURE_ROW_LIMIT,
            worker: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("missing or invalid credentials")]
    Unauthenticated,
    #[error("not a member of this workspace")]
    Forbidden,
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("{0}")]
    WouldCreateCycle(String),
    #[error("comment text is empty")]
    EmptyComment,
    #[error("{0} already exists")]
    Duplicate(String),
    #[error("node {0} has not produced output yet")]
    NotRun(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Run(RunError),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Unauthenticated => "unauthenticated",
            ServiceError::Forbidden => "forbidden",
            ServiceError::UnknownId(_) => "unknown_id",
            ServiceError::WouldCreateCycle(_) => "would_create_cycle",
            ServiceError::EmptyComment => "empty_comment",
            ServiceError::Duplicate(_) => "duplicate_id",
            ServiceError::NotRun(_) => "not_run",
            ServiceError::Invalid(_) => "invalid_request",
            ServiceError::Run(_) => "run_failed",
            ServiceError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Unauthenticated => 401,
            ServiceError::Forbidden => 403,
            ServiceError::UnknownId(_) | ServiceError::NotRun(_) => 404,
            ServiceError::WouldCreateCycle(_) | ServiceError::Duplicate(_) => 409,
            ServiceError::EmptyComment | ServiceError::Invalid(_) => 400,
            ServiceError::Run(_) => 422,
            ServiceError::Internal(_) => 500,
        }
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::WouldCreateCycle(_) => ServiceError::WouldCreateCycle(e.to_string()),
            ModelError::UnknownId(id) => ServiceError::UnknownId(id),
            ModelError::DuplicateId(id) => ServiceError::Duplicate(id),
            other => ServiceError::Invalid(other.to_string()),
        }
    }
}

impl From<ProvError> for ServiceError {
    fn from(e: ProvError) -> Self {
        match e {
            ProvError::UnknownId(id) | ProvError::UnknownVersion(id) => ServiceError::UnknownId(id),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<urbanflow::provenance::StorageError> for ServiceError {
    fn from(e: urbanflow::provenance::StorageError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

impl From<TemplateError> for ServiceError {
    fn from(e: TemplateError) -> Self {
        match e {
            TemplateError::Unknown(id) => ServiceError::UnknownId(id),
            TemplateError::DuplicateTemplateId(id) => ServiceError::Duplicate(id),
            other => ServiceError::Invalid(other.to_string()),
        }
    }
}

impl From<RunError> for ServiceError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::UnknownId(id) => ServiceError::UnknownId(id.to_string()),
            other => ServiceError::Run(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UserRecord {
    id: String,
    display_name: String,
    token_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Mutation,
    RunResult,
    Selection,
    Comment,
    Rollback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: Json,
    pub actor: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkspaceRecord {
    id: String,
    name: String,
    members: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceView {
    pub id: String,
    pub name: String,
    pub members: Vec<String>,
    pub spec: DataflowSpec,
    pub last_event: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MutationReceipt {
    pub dataflow_version: ContentHash,
    pub tx_seq: u64,
    pub event_seq: u64,
}

pub enum Output {
    Envelope(Vec<u8>),
    View(Box<ViewDescriptor>),
}

struct Workspace {
    record: RwLock<WorkspaceRecord>,
    spec: RwLock<DataflowSpec>,
    /// Single writer for spec mutations.
    writer: Mutex<()>,
    prov: Arc<ProvenanceStore>,
    engine: Engine,
    events: Mutex<Vec<Event>>,
    selections: Mutex<BTreeMap<NodeId, SelectionState>>,
    notify: Notify,
}

/// Routes op and view documents to the in-process interpreter and any other
/// code to the configured worker.
struct Router {
    builtin: BuiltinExecutor,
    worker: Option<ProcessExecutor>,
}

impl Executor for Router {
    fn execute(&self, code: &str, inputs: &[Arc<DataLayer>]) -> std::result::Result<ExecOutput, String> {
        if is_view_code(code) || OpDoc::parse(code).is_ok() {
            return self.builtin.execute(code, inputs);
        }
        match &self.worker {
            Some(w) => w.execute(code, inputs),
            None => self.builtin.execute(code, inputs),
        }
    }
}

pub struct Service {
    storage: Arc<dyn Storage>,
    config: Config,
    executor: Arc<Router>,
    templates: TemplateRegistry,
    workspaces: RwLock<BTreeMap<String, Arc<Workspace>>>,
    /// Serializes user registration.
    accounts: Mutex<()>,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::thread_rng().fill_bytes(&mut buf);
    hex::encode(buf)
}

fn meta_key(kind: &str, parts: &[&[u8]]) -> Vec<u8> {
    let mut k = kind.as_bytes().to_vec();
    for p in parts {
        k.push(0);
        k.extend_from_slice(p);
    }
    k
}

fn decode<T: for<'de> Deserialize<'de>>(bytes: &[u8]) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| ServiceError::Internal(format!("corrupt record: {e}")))
}

impl Service {
    pub fn open(config: Config) -> Result<Service> {
        let storage: Arc<dyn Storage> = match &config.db_path {
            Some(p) => Arc::new(RedbStorage::open(p)?),
            None => Arc::new(MemoryStorage::new()),
        };
        let templates = match &config.data_dir {
            Some(dir) => TemplateRegistry::open(dir.join("templates.json"))?,
            None => TemplateRegistry::with_builtins(),
        };
        let worker = config.worker.as_ref().and_then(|cmd| {
            let (program, args) = cmd.split_first()?;
            Some(ProcessExecutor::new(program, args.to_vec()).with_timeout(config.exec_timeout))
        });
        let executor = Arc::new(Router { builtin: BuiltinExecutor::new(config.data_dir.clone()), worker });
        let svc = Service {
            storage,
            config,
            executor,
            templates,
            workspaces: RwLock::new(BTreeMap::new()),
            accounts: Mutex::new(()),
        };
        svc.load_workspaces()?;
        Ok(svc)
    }

    pub fn in_memory() -> Service {
        Service::open(Config::default()).expect("memory storage")
    }

    fn load_workspaces(&self) -> Result<()> {
        for (_, bytes) in self.storage.scan(Table::Meta, &meta_key("workspace", &[]))? {
            let record: WorkspaceRecord = decode(&bytes)?;
            let prov = Arc::new(ProvenanceStore::open(self.storage.clone(), record.id.clone(), self.config.capture_row_limit)?);
            let spec = prov.current_spec()?.unwrap_or_else(|| DataflowSpec::empty(record.id.clone(), record.name.clone()));
            let events = self
                .storage
                .scan(Table::Meta, &meta_key("event", &[record.id.as_bytes(), b""]))?
                .iter()
                .map(|(_, v)| decode(v))
                .collect::<Result<Vec<Event>>>()?;
            let id = record.id.clone();
            let ws = self.workspace_from(record, spec, prov, events);
            self.workspaces.write().insert(id, Arc::new(ws));
        }
        Ok(())
    }

    fn workspace_from(&self, record: WorkspaceRecord, spec: DataflowSpec, prov: Arc<ProvenanceStore>, events: Vec<Event>) -> Workspace {
        let engine = Engine::new(prov.clone(), self.executor.clone());
        Workspace {
            record: RwLock::new(record),
            spec: RwLock::new(spec),
            writer: Mutex::new(()),
            prov,
            engine,
            events: Mutex::new(events),
            selections: Mutex::new(BTreeMap::new()),
            notify: Notify::new(),
        }
    }

    // ---- accounts

    pub fn register_user(&self, id: &str, display_name: &str, secret: &str) -> Result<User> {
        if id.is_empty() || id.contains(['/', '\0']) {
            return Err(ServiceError::Invalid("user id must be non-empty and contain no '/'".into()));
        }
        if secret.len() < 8 {
            return Err(ServiceError::Invalid("secret must have at least 8 characters".into()));
        }
        let _guard = self.accounts.lock();
        let key = meta_key("user", &[id.as_bytes()]);
        if self.storage.get(Table::Meta, &key)?.is_some() {
            return Err(ServiceError::Duplicate(id.to_string()));
        }
        let record = UserRecord {
            id: id.to_string(),
            display_name: display_name.to_string(),
            token_hash: sha256_hex(&[b"secret", id.as_bytes(), secret.as_bytes()]),
        };
        self.storage.put(Table::Meta, &key, &to_canonical_vec(&record))?;
        Ok(User { id: record.id, display_name: record.display_name })
    }

    /// A new bearer token for the user.
    pub fn create_session(&self, id: &str, secret: &str) -> Result<String> {
        let record: UserRecord = match self.storage.get(Table::Meta, &meta_key("user", &[id.as_bytes()]))? {
            Some(bytes) => decode(&bytes)?,
            None => return Err(ServiceError::Unauthenticated),
        };
        if record.token_hash != sha256_hex(&[b"secret", id.as_bytes(), secret.as_bytes()]) {
            return Err(ServiceError::Unauthenticated);
        }
        let token = random_hex(32);
        let key = meta_key("session", &[sha256_hex(&[token.as_bytes()]).as_bytes()]);
        self.storage.put(Table::Meta, &key, id.as_bytes())?;
        Ok(token)
    }

    /// The user a bearer token belongs to.
    pub fn authenticate(&self, token: &str) -> Result<String> {
        let key = meta_key("session", &[sha256_hex(&[token.as_bytes()]).as_bytes()]);
        match self.storage.get(Table::Meta, &key)? {
            Some(user) => String::from_utf8(user).map_err(|_| ServiceError::Unauthenticated),
            None => Err(ServiceError::Unauthenticated),
        }
    }

    fn user_exists(&self, id: &str) -> Result<bool> {
        Ok(self.storage.get(Table::Meta, &meta_key("user", &[id.as_bytes()]))?.is_some())
    }

    // ---- workspaces

    fn member_ws(&self, user: &str, ws: &str) -> Result<Arc<Workspace>> {
        let w = self.workspaces.read().get(ws).cloned().ok_or_else(|| ServiceError::UnknownId(ws.to_string()))?;
        if !w.record.read().members.contains(user) {
            return Err(ServiceError::Forbidden);
        }
        Ok(w)
    }

    pub fn create_workspace(&self, user: &str, name: &str) -> Result<String> {
        let id = random_hex(8);
        let record = WorkspaceRecord { id: id.clone(), name: name.to_string(), members: BTreeSet::from([user.to_string()]) };
        let prov = Arc::new(ProvenanceStore::open(self.storage.clone(), id.clone(), self.config.capture_row_limit)?);
        let spec = DataflowSpec::empty(id.clone(), name);
        prov.genesis(user, &spec)?;
        self.storage.put(Table::Meta, &meta_key("workspace", &[id.as_bytes()]), &to_canonical_vec(&record))?;
        let ws = self.workspace_from(record, spec, prov, Vec::new());
        self.workspaces.write().insert(id.clone(), Arc::new(ws));
        Ok(id)
    }

    pub fn list_workspaces(&self, user: &str) -> Vec<(String, String)> {
        self.workspaces
            .read()
            .values()
            .filter_map(|w| {
                let r = w.record.read();
                r.members.contains(user).then(|| (r.id.clone(), r.name.clone()))
            })
            .collect()
    }

    pub fn add_member(&self, user: &str, ws: &str, member: &str) -> Result<Vec<String>> {
        let w = self.member_ws(user, ws)?;
        if !self.user_exists(member)? {
            return Err(ServiceError::UnknownId(member.to_string()));
        }
        let mut record = w.record.write();
        record.members.insert(member.to_string());
        self.storage.put(Table::Meta, &meta_key("workspace", &[ws.as_bytes()]), &to_canonical_vec(&*record))?;
        Ok(record.members.iter().cloned().collect())
    }

    /// The workspace with its current spec, or only its pinned nodes when
    /// `visualization` is set.
    pub fn get_workspace(&self, user: &str, ws: &str, visualization: bool) -> Result<WorkspaceView> {
        let w = self.member_ws(user, ws)?;
        let record = w.record.read().clone();
        let spec = w.spec.read().clone();
        let last_event = w.events.lock().last().map_or(0, |e| e.seq);
        Ok(WorkspaceView {
            id: record.id,
            name: record.name,
            members: record.members.into_iter().collect(),
            spec: if visualization { spec.pinned_view() } else { spec },
            last_event,
        })
    }

    fn emit(&self, w: &Workspace, kind: EventKind, actor: &str, payload: Json) -> Result<u64> {
        let mut events = w.events.lock();
        let seq = events.last().map_or(0, |e| e.seq) + 1;
        let event = Event { seq, kind, payload, actor: actor.to_string(), timestamp: Utc::now() };
        let ws = w.record.read().id.clone();
        self.storage.put(Table::Meta, &meta_key("event", &[ws.as_bytes(), &seq.to_be_bytes()]), &to_canonical_vec(&event))?;
        events.push(event);
        drop(events);
        w.notify.notify_waiters();
        Ok(seq)
    }

    /// Apply a mutation under the workspace lock. Rejected mutations record
    /// nothing; accepted ones record one transaction and one event.
    pub fn post_mutation(&self, user: &str, ws: &str, mutation: Mutation) -> Result<MutationReceipt> {
        let w = self.member_ws(user, ws)?;
        let _writer = w.writer.lock();
        let mutation = match mutation {
            Mutation::AddComment { id, comment } => {
                if comment.text.trim().is_empty() {
                    return Err(ServiceError::EmptyComment);
                }
                let n = w.spec.read().node(&id).map(|n| n.comments.len()).ok_or_else(|| ServiceError::UnknownId(id.to_string()))?;
                let comment = Comment { id: format!("{id}#{}", n + 1), user: user.to_string(), timestamp: Utc::now(), text: comment.text };
                Mutation::AddComment { id, comment }
            }
            // Restored code always comes from the stored version.
            Mutation::RestoreVersion { id, version, .. } => w.prov.rollback_mutation(&id, &version)?,
            other => other,
        };
        let old = w.spec.read().clone();
        let next = apply_mutation(&old, &mutation)?;
        let tx = w.prov.record_transaction(user, Some(&mutation), &next)?;
        self.invalidate(&w, &old, &next, &mutation);
        *w.spec.write() = next;
        let kind = match mutation {
            Mutation::AddComment { .. } => EventKind::Comment,
            Mutation::RestoreVersion { .. } => EventKind::Rollback,
            _ => EventKind::Mutation,
        };
        let payload = json!({"tx_seq": tx.seq, "dataflow_version": tx.dataflow_version, "mutation": mutation});
        let event_seq = self.emit(&w, kind, user, payload)?;
        Ok(MutationReceipt { dataflow_version: tx.dataflow_version, tx_seq: tx.seq, event_seq })
    }

    fn invalidate(&self, w: &Workspace, old: &DataflowSpec, next: &DataflowSpec, m: &Mutation) {
        if !m.affects_execution() {
            return;
        }
        let e = &w.engine;
        match m {
            Mutation::AddNode { .. } => {}
            Mutation::RemoveNode { id } => {
                let _ = e.invalidate(old, id);
                e.forget(id);
                w.selections.lock().remove(id);
            }
            Mutation::AddEdge { edge } | Mutation::RemoveEdge { edge } => {
                let spec = if matches!(m, Mutation::AddEdge { .. }) { next } else { old };
                match edge {
                    Edge::Data(d) => {
                        let _ = e.invalidate(spec, &d.target);
                    }
                    Edge::Interaction(d) => {
                        let _ = e.invalidate(spec, &d.endpoint_a);
                        let _ = e.invalidate(spec, &d.endpoint_b);
                    }
                }
            }
            other => {
                if let Some(id) = other.node_id() {
                    let _ = e.invalidate(next, id);
                }
            }
        }
    }

    /// Add a node instantiated from a registered template.
    pub fn add_node(&self, user: &str, ws: &str, template_id: &str, node_id: &str, rect: Option<CanvasRect>) -> Result<MutationReceipt> {
        let template = self.templates.require(template_id)?;
        self.post_mutation(user, ws, Mutation::AddNode { node: template.instantiate(node_id), rect })
    }

    pub fn post_comment(&self, user: &str, ws: &str, node: &NodeId, text: &str) -> Result<String> {
        let comment = Comment { id: String::new(), user: user.to_string(), timestamp: Utc::now(), text: text.to_string() };
        self.post_mutation(user, ws, Mutation::AddComment { id: node.clone(), comment })?;
        let w = self.member_ws(user, ws)?;
        let spec = w.spec.read();
        let id = spec.node(node).and_then(|n| n.comments.last()).map(|c| c.id.clone());
        id.ok_or_else(|| ServiceError::UnknownId(node.to_string()))
    }

    pub fn comments(&self, user: &str, ws: &str, node: &NodeId) -> Result<Vec<Comment>> {
        let w = self.member_ws(user, ws)?;
        let spec = w.spec.read();
        Ok(spec.node(node).ok_or_else(|| ServiceError::UnknownId(node.to_string()))?.comments.clone())
    }

    pub fn rollback(&self, user: &str, ws: &str, node: &NodeId, version: &ContentHash) -> Result<MutationReceipt> {
        self.post_mutation(user, ws, Mutation::RestoreVersion { id: node.clone(), version: version.clone(), code: String::new() })
    }

    pub fn version_tree(&self, user: &str, ws: &str, node: &NodeId) -> Result<VersionTree> {
        let w = self.member_ws(user, ws)?;
        Ok(w.prov.version_tree(node)?)
    }

    pub fn transactions(&self, user: &str, ws: &str) -> Result<Vec<Transaction>> {
        let w = self.member_ws(user, ws)?;
        Ok(w.prov.transactions(None)?)
    }

    pub fn executions(&self, user: &str, ws: &str) -> Result<Vec<urbanflow::provenance::ExecutionRecord>> {
        let w = self.member_ws(user, ws)?;
        Ok(w.prov.executions()?)
    }

    pub fn prov_export(&self, user: &str, ws: &str, range: Option<(u64, u64)>) -> Result<Json> {
        let w = self.member_ws(user, ws)?;
        Ok(export_prov(&w.prov, range)?)
    }

    /// Number of executor invocations in the workspace so far.
    pub fn invocations(&self, user: &str, ws: &str) -> Result<u64> {
        Ok(self.member_ws(user, ws)?.engine.invocations())
    }

    // ---- execution

    fn run_payload(node: Option<&NodeId>, results: &[NodeRunResult]) -> Json {
        let summary: Vec<Json> = results
            .iter()
            .map(|r| {
                json!({
                    "node_id": r.node_id,
                    "status": r.status,
                    "outputs": r.outputs,
                    "cache_hit": r.cache_hit,
                    "error": r.error,
                })
            })
            .collect();
        json!({"node": node, "results": summary})
    }

    /// Run the whole dataflow against a snapshot of the current spec.
    pub fn run_dataflow(&self, user: &str, ws: &str, bypass_cache: bool) -> Result<Vec<NodeRunResult>> {
        let w = self.member_ws(user, ws)?;
        let spec = w.spec.read().clone();
        let selections = w.selections.lock().clone();
        let mut ctx = RunContext::new(user, &selections);
        ctx.bypass_cache = bypass_cache;
        let results = w.engine.run_dataflow(&spec, &ctx)?;
        self.emit(&w, EventKind::RunResult, user, Self::run_payload(None, &results))?;
        Ok(results)
    }

    pub fn run_node(&self, user: &str, ws: &str, node: &NodeId, bypass_cache: bool) -> Result<NodeRunResult> {
        let w = self.member_ws(user, ws)?;
        let spec = w.spec.read().clone();
        let selections = w.selections.lock().clone();
        let mut ctx = RunContext::new(user, &selections);
        ctx.bypass_cache = bypass_cache;
        let result = w.engine.run_node(&spec, node, &ctx)?;
        self.emit(&w, EventKind::RunResult, user, Self::run_payload(Some(node), std::slice::from_ref(&result)))?;
        Ok(result)
    }

    /// Latest output of a node on `port`, as an envelope or a view
    /// descriptor.
    pub fn output(&self, user: &str, ws: &str, node: &NodeId, port: usize, view: bool) -> Result<Output> {
        let w = self.member_ws(user, ws)?;
        let spec_node = w.spec.read().node(node).cloned().ok_or_else(|| ServiceError::UnknownId(node.to_string()))?;
        let hashes = w.engine.outputs_of(node).ok_or_else(|| ServiceError::NotRun(node.to_string()))?;
        let hash = hashes.get(port).ok_or_else(|| ServiceError::Invalid(format!("node {node} has no output port {port}")))?;
        let layer = w.engine.layer(hash).ok_or_else(|| ServiceError::NotRun(node.to_string()))?;
        if !view {
            return Ok(Output::Envelope(serialize_layer(&layer)));
        }
        let code = render(&spec_node.canonical_code, &spec_node.widget_values).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let code = (spec_node.kind == NodeKind::Visualization).then_some(code.as_str());
        let desc = render_view(code, &layer, None).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        Ok(Output::View(Box::new(desc)))
    }

    // ---- selections

    /// Apply a pick on an interaction node and propagate it across linked
    /// interaction nodes. Returns the states of every node that changed.
    pub fn select(
        &self,
        user: &str,
        ws: &str,
        node: &NodeId,
        ids: &BTreeSet<usize>,
        mode: SelectionMode,
    ) -> Result<BTreeMap<NodeId, SelectionState>> {
        let w = self.member_ws(user, ws)?;
        let spec = w.spec.read().clone();
        match spec.node(node) {
            Some(n) if n.kind == NodeKind::Interaction => {}
            Some(_) => return Err(ServiceError::Invalid(format!("{node} is not an interaction node"))),
            None => return Err(ServiceError::UnknownId(node.to_string())),
        }
        let links = LinkSpec::all(&spec);
        let mut involved: BTreeSet<NodeId> = BTreeSet::from([node.clone()]);
        for l in &links {
            involved.insert(l.from.clone());
            involved.insert(l.to.clone());
        }
        let snapshot = w.selections.lock().clone();
        let ctx = RunContext::new(user, &snapshot);
        let mut layers: BTreeMap<NodeId, Arc<DataLayer>> = BTreeMap::new();
        for n in &involved {
            let inputs = w.engine.input_layers(&spec, n, &ctx)?;
            let first = inputs.into_iter().next().ok_or_else(|| ServiceError::Invalid(format!("{n} has no input")))?;
            layers.insert(n.clone(), first);
        }
        let refs: BTreeMap<NodeId, &DataLayer> = layers.iter().map(|(k, v)| (k.clone(), v.as_ref())).collect();

        let mut states = w.selections.lock();
        let before = states.clone();
        let current = states.get(node).cloned().unwrap_or_else(|| SelectionState::new(node.clone()));
        let next = apply_selection(&current, ids, mode, layers[node].len()).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let mut working = states.clone();
        for n in &involved {
            working.entry(n.clone()).or_insert_with(|| SelectionState::new(n.clone()));
        }
        working.insert(node.clone(), next);
        propagate(node, &mut working, &links, &refs).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        *states = working;
        let changed: BTreeMap<NodeId, SelectionState> =
            states.iter().filter(|(k, v)| before.get(*k) != Some(*v)).map(|(k, v)| (k.clone(), v.clone())).collect();
        drop(states);
        for n in changed.keys() {
            let _ = w.engine.invalidate(&spec, n);
        }
        let payload = json!({
            "origin": node,
            "mode": mode,
            "selections": changed.iter().map(|(k, v)| (k.to_string(), json!(v.selected))).collect::<serde_json::Map<_, _>>(),
        });
        self.emit(&w, EventKind::Selection, user, payload)?;
        Ok(changed)
    }

    pub fn selections(&self, user: &str, ws: &str) -> Result<BTreeMap<NodeId, SelectionState>> {
        Ok(self.member_ws(user, ws)?.selections.lock().clone())
    }

    // ---- events

    fn events_after(w: &Workspace, after: u64) -> Vec<Event> {
        w.events.lock().iter().filter(|e| e.seq > after).cloned().collect()
    }

    /// Events with `seq > after`, waiting up to `timeout` for one to arrive.
    pub async fn poll_events(&self, user: &str, ws: &str, after: u64, timeout: Duration) -> Result<Vec<Event>> {
        let w = self.member_ws(user, ws)?;
        let deadline = tokio::time::Instant::now() + timeout.min(MAX_POLL);
        loop {
            let notified = w.notify.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            let events = Self::events_after(&w, after);
            if !events.is_empty() {
                return Ok(events);
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return Ok(Vec::new());
            }
        }
    }

    // ---- templates

    pub fn templates(&self, kind: Option<NodeKind>) -> Vec<NodeTemplate> {
        self.templates.list(kind)
    }

    pub fn template(&self, id: &str) -> Result<NodeTemplate> {
        Ok(self.templates.require(id)?)
    }

    pub fn import_template(&self, bytes: &[u8]) -> Result<String> {
        Ok(self.templates.import(bytes)?)
    }
}

/// Rebuild a workspace spec from its event log.
pub fn replay_events(id: &str, name: &str, events: &[Event]) -> std::result::Result<DataflowSpec, String> {
    let mut spec = DataflowSpec::empty(id, name);
    for e in events {
        if let Some(m) = e.payload.get("mutation") {
            let m: Mutation = serde_json::from_value(m.clone()).map_err(|err| format!("event {}: {err}", e.seq))?;
            spec = apply_mutation(&spec, &m).map_err(|err| format!("event {}: {err}", e.seq))?;
        }
    }
    Ok(spec)
}
