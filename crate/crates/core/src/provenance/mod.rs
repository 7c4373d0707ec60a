//! Transaction log, node version trees, execution records and layer
//! instances for one workspace, plus PROV-JSON export.

mod prov;
mod storage;

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{to_canonical_vec, ContentHash};
use crate::layers::{serialize_layer, AttributeDef, DataLayer, Dtype, LayerKind};
use crate::model::{apply_mutation, DataflowSpec, ModelError, Mutation, NodeId, NodeSpec};

pub use prov::{export_prov, prov_problems};
pub use storage::{MemoryStorage, RedbStorage, Storage, StorageError, Table};

/// Default row limit for full layer capture.
pub const DEFAULT_CAPTURE_ROW_LIMIT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProvError {
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("unknown version {0}")]
    UnknownVersion(String),
    #[error("corrupt provenance record: {0}")]
    Corrupt(String),
    #[error("replay failed: {0}")]
    Replay(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub seq: u64,
    pub user: String,
    pub timestamp: DateTime<Utc>,
    /// None only for the genesis transaction that creates the workspace.
    pub mutation: Option<Mutation>,
    pub summary: String,
    pub dataflow_version: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeVersion {
    pub id: ContentHash,
    pub node_id: NodeId,
    pub parent: Option<ContentHash>,
    pub code: String,
    pub template_id: String,
    pub created_by: String,
    pub timestamp: DateTime<Utc>,
    /// Transaction that created this version.
    pub created_in: u64,
}

/// Version id of a node's code: content-addressed over template and code.
pub fn version_id(template_id: &str, code: &str) -> ContentHash {
    ContentHash::of_parts([template_id.as_bytes(), code.as_bytes()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NodeOrigin {
    template_id: String,
    code: String,
    created_by: String,
    timestamp: DateTime<Utc>,
    created_in: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionTree {
    pub version: NodeVersion,
    pub current: bool,
    pub children: Vec<VersionTree>,
}

impl VersionTree {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(VersionTree::size).sum::<usize>()
    }

    /// (child, parent) pairs in depth-first order.
    pub fn edges(&self) -> Vec<(ContentHash, ContentHash)> {
        let mut out = Vec::new();
        for c in &self.children {
            out.push((c.version.id.clone(), self.version.id.clone()));
            out.extend(c.edges());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionKind {
    Dataflow,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub seq: u64,
    pub kind: ExecutionKind,
    pub dataflow_version: ContentHash,
    /// Latest transaction when the execution started.
    pub tx_seq: u64,
    pub node_id: Option<NodeId>,
    pub node_version: Option<ContentHash>,
    pub consumed: Vec<ContentHash>,
    pub produced: Vec<ContentHash>,
    pub cached: bool,
    pub status: ExecStatus,
    pub log: String,
    /// Enclosing dataflow execution of a node execution.
    pub parent: Option<u64>,
    pub started: DateTime<Utc>,
    pub ended: DateTime<Utc>,
    pub user: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capture {
    Full,
    Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumStats {
    pub count: usize,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerInstance {
    pub hash: ContentHash,
    pub kind: LayerKind,
    pub row_count: usize,
    pub schema: Vec<AttributeDef>,
    pub capture: Capture,
    pub stats: BTreeMap<String, NumStats>,
}

pub fn numeric_stats(layer: &DataLayer) -> BTreeMap<String, NumStats> {
    layer
        .schema()
        .iter()
        .enumerate()
        .filter(|(_, a)| a.dtype == Dtype::Number)
        .map(|(i, a)| {
            let xs: Vec<f64> = layer.column(i).filter_map(|v| v.as_f64()).collect();
            let stats = NumStats {
                count: xs.len(),
                min: xs.iter().copied().reduce(f64::min),
                max: xs.iter().copied().reduce(f64::max),
                mean: (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64),
            };
            (a.name.clone(), stats)
        })
        .collect()
}

struct Counters {
    next_tx: u64,
    next_exec: u64,
}

/// Provenance of one workspace. Writers are serialized internally; every
/// record lands in storage as a single atomic batch.
pub struct ProvenanceStore {
    storage: Arc<dyn Storage>,
    workspace: String,
    capture_row_limit: usize,
    counters: Mutex<Counters>,
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    to_canonical_vec(value)
}

fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ProvError> {
    serde_json::from_slice(bytes).map_err(|e| ProvError::Corrupt(e.to_string()))
}

type Batch = Vec<(Table, Vec<u8>, Vec<u8>)>;

impl ProvenanceStore {
    pub fn open(storage: Arc<dyn Storage>, workspace: impl Into<String>, capture_row_limit: usize) -> Result<Self, ProvError> {
        let workspace = workspace.into();
        let prefix = Self::ws_prefix(&workspace);
        let next_tx = storage.scan(Table::Transactions, &prefix)?.len() as u64;
        let next_exec = storage.scan(Table::Executions, &prefix)?.len() as u64;
        Ok(ProvenanceStore { storage, workspace, capture_row_limit, counters: Mutex::new(Counters { next_tx, next_exec }) })
    }

    pub fn in_memory(workspace: impl Into<String>) -> Self {
        Self::open(Arc::new(MemoryStorage::new()), workspace, DEFAULT_CAPTURE_ROW_LIMIT).expect("memory storage")
    }

    pub fn workspace(&self) -> &str {
        &self.workspace
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    pub fn capture_row_limit(&self) -> usize {
        self.capture_row_limit
    }

    fn ws_prefix(ws: &str) -> Vec<u8> {
        let mut k = ws.as_bytes().to_vec();
        k.push(0);
        k
    }

    fn key(&self, parts: &[&[u8]]) -> Vec<u8> {
        let mut k = Self::ws_prefix(&self.workspace);
        for (i, p) in parts.iter().enumerate() {
            if i > 0 {
                k.push(0);
            }
            k.extend_from_slice(p);
        }
        k
    }

    fn scan_decode<T: DeserializeOwned>(&self, table: Table, parts: &[&[u8]]) -> Result<Vec<T>, ProvError> {
        let mut prefix = self.key(parts);
        if !parts.is_empty() {
            prefix.push(0);
        }
        self.storage.scan(table, &prefix)?.iter().map(|(_, v)| decode(v)).collect()
    }

    /// Record the workspace's initial state. Does nothing when the log is not
    /// empty.
    pub fn genesis(&self, user: &str, spec: &DataflowSpec) -> Result<Option<Transaction>, ProvError> {
        if self.counters.lock().next_tx > 0 {
            return Ok(None);
        }
        self.record_transaction(user, None, spec).map(Some)
    }

    /// Append a transaction whose mutation produced `new_spec`. Code edits
    /// and restores also move the node's version tree.
    pub fn record_transaction(
        &self,
        user: &str,
        mutation: Option<&Mutation>,
        new_spec: &DataflowSpec,
    ) -> Result<Transaction, ProvError> {
        let mut counters = self.counters.lock();
        let seq = counters.next_tx;
        let now = Utc::now();
        let spec_bytes = new_spec.to_canonical_bytes();
        let tx = Transaction {
            seq,
            user: user.to_string(),
            timestamp: now,
            mutation: mutation.cloned(),
            summary: mutation.map_or_else(|| "create workspace".to_string(), Mutation::summary),
            dataflow_version: ContentHash::of(&spec_bytes),
        };
        let mut batch: Batch = vec![
            (Table::Specs, tx.dataflow_version.as_str().as_bytes().to_vec(), spec_bytes),
            (Table::Transactions, self.key(&[&seq.to_be_bytes()]), encode(&tx)),
        ];
        match mutation {
            Some(Mutation::AddNode { node, .. }) => {
                let origin = NodeOrigin {
                    template_id: node.template_id.clone(),
                    code: node.canonical_code.clone(),
                    created_by: user.to_string(),
                    timestamp: now,
                    created_in: seq,
                };
                batch.push((Table::NodeOrigins, self.key(&[node.id.as_str().as_bytes()]), encode(&origin)));
            }
            Some(Mutation::UpdateCode { id, code }) => {
                let node = new_spec.node(id).ok_or_else(|| ProvError::UnknownId(id.to_string()))?;
                let head = self.ensure_root(node, seq, &mut batch)?;
                let vid = version_id(&node.template_id, code);
                if self.version(id, &vid)?.is_none() && !batch_has_version(&batch, &self.version_key(id, &vid)) {
                    let v = NodeVersion {
                        id: vid.clone(),
                        node_id: id.clone(),
                        parent: Some(head),
                        code: code.clone(),
                        template_id: node.template_id.clone(),
                        created_by: user.to_string(),
                        timestamp: now,
                        created_in: seq,
                    };
                    batch.push((Table::Versions, self.version_key(id, &vid), encode(&v)));
                }
                batch.push((Table::VersionHeads, self.key(&[id.as_str().as_bytes()]), encode(&vid)));
            }
            Some(Mutation::RestoreVersion { id, version, .. }) => {
                let node = new_spec.node(id).ok_or_else(|| ProvError::UnknownId(id.to_string()))?;
                self.ensure_root(node, seq, &mut batch)?;
                if self.version(id, version)?.is_none() && !batch_has_version(&batch, &self.version_key(id, version)) {
                    return Err(ProvError::UnknownVersion(version.to_string()));
                }
                batch.push((Table::VersionHeads, self.key(&[id.as_str().as_bytes()]), encode(version)));
            }
            _ => {}
        }
        self.storage.put_batch(batch)?;
        counters.next_tx += 1;
        Ok(tx)
    }

    fn version_key(&self, node: &NodeId, vid: &ContentHash) -> Vec<u8> {
        self.key(&[node.as_str().as_bytes(), vid.as_str().as_bytes()])
    }

    fn origin(&self, node: &NodeId) -> Result<Option<NodeOrigin>, ProvError> {
        self.storage.get(Table::NodeOrigins, &self.key(&[node.as_str().as_bytes()]))?.map(|b| decode(&b)).transpose()
    }

    fn root_from(&self, node_id: &NodeId, origin: &NodeOrigin) -> NodeVersion {
        NodeVersion {
            id: version_id(&origin.template_id, &origin.code),
            node_id: node_id.clone(),
            parent: None,
            code: origin.code.clone(),
            template_id: origin.template_id.clone(),
            created_by: origin.created_by.clone(),
            timestamp: origin.timestamp,
            created_in: origin.created_in,
        }
    }

    /// Materialize the root version if the tree is still virtual; returns the
    /// current head.
    fn ensure_root(&self, node: &NodeSpec, seq: u64, batch: &mut Batch) -> Result<ContentHash, ProvError> {
        if let Some(head) = self.head(&node.id)? {
            return Ok(head);
        }
        let root = match self.origin(&node.id)? {
            Some(origin) => self.root_from(&node.id, &origin),
            None => self.root_from(
                &node.id,
                &NodeOrigin {
                    template_id: node.template_id.clone(),
                    code: node.canonical_code.clone(),
                    created_by: String::new(),
                    timestamp: Utc::now(),
                    created_in: seq,
                },
            ),
        };
        let id = root.id.clone();
        batch.push((Table::Versions, self.version_key(&node.id, &id), encode(&root)));
        batch.push((Table::VersionHeads, self.key(&[node.id.as_str().as_bytes()]), encode(&id)));
        Ok(id)
    }

    /// Current version pointer of a node, if its tree has been materialized.
    pub fn head(&self, node: &NodeId) -> Result<Option<ContentHash>, ProvError> {
        self.storage.get(Table::VersionHeads, &self.key(&[node.as_str().as_bytes()]))?.map(|b| decode(&b)).transpose()
    }

    pub fn version(&self, node: &NodeId, vid: &ContentHash) -> Result<Option<NodeVersion>, ProvError> {
        if let Some(b) = self.storage.get(Table::Versions, &self.version_key(node, vid))? {
            return Ok(Some(decode(&b)?));
        }
        // The root of an untouched node is virtual until first needed.
        if self.head(node)?.is_none() {
            if let Some(origin) = self.origin(node)? {
                let root = self.root_from(node, &origin);
                if root.id == *vid {
                    return Ok(Some(root));
                }
            }
        }
        Ok(None)
    }

    /// All versions of a node, the virtual root included.
    pub fn versions(&self, node: &NodeId) -> Result<Vec<NodeVersion>, ProvError> {
        let stored: Vec<NodeVersion> = self.scan_decode(Table::Versions, &[node.as_str().as_bytes()])?;
        if !stored.is_empty() {
            return Ok(stored);
        }
        Ok(self.origin(node)?.map(|o| vec![self.root_from(node, &o)]).unwrap_or_default())
    }

    pub fn version_tree(&self, node: &NodeId) -> Result<VersionTree, ProvError> {
        let versions = self.versions(node)?;
        let head = self.head(node)?;
        let root = versions.iter().find(|v| v.parent.is_none()).ok_or_else(|| ProvError::UnknownId(node.to_string()))?;
        let mut children: BTreeMap<&ContentHash, Vec<&NodeVersion>> = BTreeMap::new();
        for v in &versions {
            if let Some(p) = &v.parent {
                children.entry(p).or_default().push(v);
            }
        }
        for list in children.values_mut() {
            list.sort_by(|a, b| (a.timestamp, a.created_in).cmp(&(b.timestamp, b.created_in)));
        }
        fn build(v: &NodeVersion, children: &BTreeMap<&ContentHash, Vec<&NodeVersion>>, head: &ContentHash) -> VersionTree {
            VersionTree {
                version: v.clone(),
                current: v.id == *head,
                children: children.get(&v.id).map_or_else(Vec::new, |cs| cs.iter().map(|c| build(c, children, head)).collect()),
            }
        }
        let head = head.unwrap_or_else(|| root.id.clone());
        Ok(build(root, &children, &head))
    }

    /// The mutation that rolls `node` back to `version`.
    pub fn rollback_mutation(&self, node: &NodeId, version: &ContentHash) -> Result<Mutation, ProvError> {
        let v = self.version(node, version)?.ok_or_else(|| ProvError::UnknownVersion(version.to_string()))?;
        Ok(Mutation::RestoreVersion { id: node.clone(), version: v.id, code: v.code })
    }

    /// Version id for the node's current code, materializing the root when
    /// the tree is still virtual.
    pub fn version_for_run(&self, node: &NodeSpec) -> Result<ContentHash, ProvError> {
        let guard = self.counters.lock();
        let mut batch = Vec::new();
        self.ensure_root(node, guard.next_tx.saturating_sub(1), &mut batch)?;
        if !batch.is_empty() {
            self.storage.put_batch(batch)?;
        }
        Ok(version_id(&node.template_id, &node.canonical_code))
    }

    pub fn transactions(&self, range: Option<(u64, u64)>) -> Result<Vec<Transaction>, ProvError> {
        let all: Vec<Transaction> = self.scan_decode(Table::Transactions, &[])?;
        Ok(match range {
            Some((from, to)) => all.into_iter().filter(|t| t.seq >= from && t.seq <= to).collect(),
            None => all,
        })
    }

    pub fn last_transaction(&self) -> Result<Option<Transaction>, ProvError> {
        let n = self.counters.lock().next_tx;
        if n == 0 {
            return Ok(None);
        }
        let bytes = self.storage.get(Table::Transactions, &self.key(&[&(n - 1).to_be_bytes()]))?;
        bytes.map(|b| decode(&b)).transpose()
    }

    pub fn spec(&self, version: &ContentHash) -> Result<DataflowSpec, ProvError> {
        let bytes = self
            .storage
            .get(Table::Specs, version.as_str().as_bytes())?
            .ok_or_else(|| ProvError::UnknownId(version.to_string()))?;
        DataflowSpec::from_bytes(&bytes).map_err(|e| ProvError::Corrupt(e.to_string()))
    }

    pub fn current_spec(&self) -> Result<Option<DataflowSpec>, ProvError> {
        self.last_transaction()?.map(|t| self.spec(&t.dataflow_version)).transpose()
    }

    /// Rebuild the current spec from the genesis snapshot and the mutation log.
    pub fn replay(&self) -> Result<DataflowSpec, ProvError> {
        let txs = self.transactions(None)?;
        let genesis = txs.first().ok_or_else(|| ProvError::UnknownId(self.workspace.clone()))?;
        let mut spec = self.spec(&genesis.dataflow_version)?;
        for tx in &txs[1..] {
            if let Some(m) = &tx.mutation {
                spec = apply_mutation(&spec, m)?;
            }
        }
        Ok(spec)
    }

    /// Store a layer instance; the envelope is kept when the layer is small
    /// enough for full capture.
    pub fn record_layer(&self, layer: &DataLayer) -> Result<LayerInstance, ProvError> {
        let hash = layer.content_hash();
        if let Some(b) = self.storage.get(Table::LayerInstances, hash.as_str().as_bytes())? {
            return decode(&b);
        }
        let capture = if layer.len() <= self.capture_row_limit { Capture::Full } else { Capture::Summary };
        let inst = LayerInstance {
            hash: hash.clone(),
            kind: layer.kind(),
            row_count: layer.len(),
            schema: layer.schema().to_vec(),
            capture,
            stats: numeric_stats(layer),
        };
        let mut batch = vec![(Table::LayerInstances, hash.as_str().as_bytes().to_vec(), encode(&inst))];
        if capture == Capture::Full {
            batch.push((Table::Blobs, hash.as_str().as_bytes().to_vec(), serialize_layer(layer)));
        }
        self.storage.put_batch(batch)?;
        Ok(inst)
    }

    pub fn layer_instance(&self, hash: &ContentHash) -> Result<Option<LayerInstance>, ProvError> {
        self.storage.get(Table::LayerInstances, hash.as_str().as_bytes())?.map(|b| decode(&b)).transpose()
    }

    pub fn layer_envelope(&self, hash: &ContentHash) -> Result<Option<Vec<u8>>, ProvError> {
        Ok(self.storage.get(Table::Blobs, hash.as_str().as_bytes())?)
    }

    /// Append an execution record; `seq` is assigned here.
    pub fn record_execution(&self, mut record: ExecutionRecord) -> Result<ExecutionRecord, ProvError> {
        let mut counters = self.counters.lock();
        record.seq = counters.next_exec;
        self.storage.put(Table::Executions, &self.key(&[&record.seq.to_be_bytes()]), &encode(&record))?;
        counters.next_exec += 1;
        Ok(record)
    }

    /// Rewrite a recorded execution, e.g. to close a dataflow run.
    pub fn update_execution(&self, record: &ExecutionRecord) -> Result<(), ProvError> {
        let _guard = self.counters.lock();
        Ok(self.storage.put(Table::Executions, &self.key(&[&record.seq.to_be_bytes()]), &encode(record))?)
    }

    pub fn executions(&self) -> Result<Vec<ExecutionRecord>, ProvError> {
        self.scan_decode(Table::Executions, &[])
    }

    pub fn tx_count(&self) -> u64 {
        self.counters.lock().next_tx
    }

    /// Nodes ever added in this workspace.
    pub fn known_nodes(&self) -> Result<Vec<NodeId>, ProvError> {
        let prefix = self.key(&[]);
        Ok(self
            .storage
            .scan(Table::NodeOrigins, &prefix)?
            .into_iter()
            .map(|(k, _)| NodeId::from(String::from_utf8_lossy(&k[prefix.len()..]).into_owned()))
            .collect())
    }
}

fn batch_has_version(batch: &Batch, key: &[u8]) -> bool {
    batch.iter().any(|(t, k, _)| *t == Table::Versions && k == key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeKind, PortKinds};

    fn loader(id: &str, code: &str) -> NodeSpec {
        NodeSpec::new(id, NodeKind::Loader, "load.csv", code, vec![], vec![PortKinds::any()])
    }

    struct Ws {
        prov: ProvenanceStore,
        spec: DataflowSpec,
    }

    impl Ws {
        fn new() -> Self {
            let spec = DataflowSpec::empty("w", "test");
            let prov = ProvenanceStore::in_memory("w");
            prov.genesis("alice", &spec).unwrap();
            Ws { prov, spec }
        }

        fn apply(&mut self, user: &str, m: Mutation) -> Transaction {
            self.spec = apply_mutation(&self.spec, &m).unwrap();
            self.prov.record_transaction(user, Some(&m), &self.spec).unwrap()
        }

        fn edit(&mut self, code: &str) {
            self.apply("alice", Mutation::UpdateCode { id: "A".into(), code: code.into() });
        }
    }

    #[test]
    fn add_node_creates_no_version_but_tree_has_root() {
        let mut ws = Ws::new();
        ws.apply("alice", Mutation::AddNode { node: loader("A", "v0"), rect: None });
        assert!(ws.prov.head(&"A".into()).unwrap().is_none());
        let tree = ws.prov.version_tree(&"A".into()).unwrap();
        assert_eq!(tree.size(), 1);
        assert_eq!(tree.version.code, "v0");
        assert!(tree.current);
    }

    #[test]
    fn edits_form_a_path_and_rollback_branches() {
        let mut ws = Ws::new();
        ws.apply("alice", Mutation::AddNode { node: loader("A", "v0"), rect: None });
        for k in 1..=3 {
            ws.edit(&format!("v{k}"));
        }
        let tree = ws.prov.version_tree(&"A".into()).unwrap();
        assert_eq!(tree.size(), 4);
        assert_eq!(tree.edges().len(), 3);

        let root = tree.version.id.clone();
        let m = ws.prov.rollback_mutation(&"A".into(), &root).unwrap();
        ws.apply("bob", m);
        assert_eq!(ws.spec.node(&"A".into()).unwrap().canonical_code, "v0");
        ws.edit("w1");
        let tree = ws.prov.version_tree(&"A".into()).unwrap();
        assert_eq!(tree.size(), 5);
        assert_eq!(tree.children.len(), 2);
        assert_eq!(tree.children[1].version.code, "w1");
        assert!(tree.children[1].current);
    }

    #[test]
    fn editing_back_to_existing_bytes_repoints() {
        let mut ws = Ws::new();
        ws.apply("alice", Mutation::AddNode { node: loader("A", "v0"), rect: None });
        ws.edit("v1");
        ws.edit("v0");
        let tree = ws.prov.version_tree(&"A".into()).unwrap();
        assert_eq!(tree.size(), 2);
        assert!(tree.current);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut ws = Ws::new();
        ws.apply("alice", Mutation::AddNode { node: loader("A", "v0"), rect: None });
        let bogus = ContentHash::of(b"nope");
        assert_eq!(ws.prov.rollback_mutation(&"A".into(), &bogus), Err(ProvError::UnknownVersion(bogus.to_string())));
    }

    #[test]
    fn log_is_ordered_and_replays() {
        let mut ws = Ws::new();
        ws.apply("alice", Mutation::AddNode { node: loader("A", "v0"), rect: None });
        ws.apply("bob", Mutation::AddNode { node: loader("B", "x"), rect: None });
        ws.edit("v1");
        let txs = ws.prov.transactions(None).unwrap();
        let seqs: Vec<u64> = txs.iter().map(|t| t.seq).collect();
        assert_eq!(seqs, [0, 1, 2, 3]);
        assert_eq!(txs[2].user, "bob");
        assert_eq!(ws.prov.replay().unwrap().to_canonical_bytes(), ws.spec.to_canonical_bytes());
        assert_eq!(ws.prov.current_spec().unwrap().unwrap(), ws.spec);
    }

    #[test]
    fn capture_policy() {
        let storage: Arc<dyn Storage> = Arc::new(MemoryStorage::new());
        let prov = ProvenanceStore::open(storage, "w", 2).unwrap();
        let small = crate::layers::load_table(b"a\n1\n2\n", &Default::default()).unwrap();
        let big = crate::layers::load_table(b"a\n1\n2\n3\n", &Default::default()).unwrap();
        let s = prov.record_layer(&small).unwrap();
        let b = prov.record_layer(&big).unwrap();
        assert_eq!(s.capture, Capture::Full);
        assert_eq!(b.capture, Capture::Summary);
        let env = prov.layer_envelope(&s.hash).unwrap().unwrap();
        assert_eq!(ContentHash::of(&env), s.hash);
        assert!(prov.layer_envelope(&b.hash).unwrap().is_none());
        assert_eq!(b.stats["a"].mean, Some(2.0));
    }

    #[test]
    fn reopen_continues_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let storage: Arc<dyn Storage> = Arc::new(RedbStorage::open(dir.path().join("p.redb")).unwrap());
        let spec = DataflowSpec::empty("w", "t");
        {
            let prov = ProvenanceStore::open(storage.clone(), "w", 10).unwrap();
            prov.genesis("a", &spec).unwrap();
        }
        let prov = ProvenanceStore::open(storage, "w", 10).unwrap();
        assert!(prov.genesis("a", &spec).unwrap().is_none());
        assert_eq!(prov.tx_count(), 1);
    }
}
