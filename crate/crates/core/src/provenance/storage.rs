//! Ordered key-value storage behind provenance, the layer store and the
//! service's account tables.

use std::collections::BTreeMap;
use std::path::Path;

use parking_lot::RwLock;
use redb::{Database, TableDefinition};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("storage failure: {0}")]
pub struct StorageError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Table {
    /// Layer envelopes by content hash.
    Blobs,
    /// Dataflow snapshots by content hash.
    Specs,
    Transactions,
    Versions,
    VersionHeads,
    NodeOrigins,
    Executions,
    LayerInstances,
    CacheIndex,
    /// Free-form records owned by the service (users, sessions, workspaces).
    Meta,
}

impl Table {
    pub const ALL: [Table; 10] = [
        Table::Blobs,
        Table::Specs,
        Table::Transactions,
        Table::Versions,
        Table::VersionHeads,
        Table::NodeOrigins,
        Table::Executions,
        Table::LayerInstances,
        Table::CacheIndex,
        Table::Meta,
    ];

    fn name(self) -> &'static str {
        match self {
            Table::Blobs => "blobs",
            Table::Specs => "specs",
            Table::Transactions => "transactions",
            Table::Versions => "versions",
            Table::VersionHeads => "version_heads",
            Table::NodeOrigins => "node_origins",
            Table::Executions => "executions",
            Table::LayerInstances => "layer_instances",
            Table::CacheIndex => "cache_index",
            Table::Meta => "meta",
        }
    }
}

pub type Entry = (Vec<u8>, Vec<u8>);

/// Every `put_batch` is atomic; reads see whole batches or nothing.
pub trait Storage: Send + Sync {
    fn put_batch(&self, writes: Vec<(Table, Vec<u8>, Vec<u8>)>) -> Result<(), StorageError>;
    fn get(&self, table: Table, key: &[u8]) -> Result<Option<Vec<u8>>, StorageError>;
    /// Entries whose key starts with `prefix`, in key order.
    fn scan(&self, table: Table, prefix: &[u8]) -> Result<Vec<Entry>, StorageError>;

    fn put(&self, table: Table, key: &[u8], value: &[u8]) -> Result<(), StorageError> {
        self.put_batch(vec![(table, key.to_vec(), value.to_vec())])
    }
}

#[derive(Default)]
pub struct MemoryStorage {
    tables: RwLock<BTreeMap<Table, BTreeMap<Vec<u8>, Vec<u8>>>>,
}

impl MemoryStorage {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Storage for MemoryStorage {
    fn put_batch(&self, writes: Vec<(Table, Vec<u8>, Vec<u8>)>) -> Result<(), StorageError> {
        let mut tables = self.tables.write();
        for (t, k, v) in writes {
            tables.entry(t).or_default().insert(k, v);
        }
        Ok(())
    }

    fn get(&self, table: Table, key: &[u8]) -> Result<Option<Vec<u8>>, StorageError> {
        Ok(self.tables.read().get(&table).and_then(|t| t.get(key).cloned()))
    }

    fn scan(&self, table: Table, prefix: &[u8]) -> Result<Vec<Entry>, StorageError> {
        let tables = self.tables.read();
        let Some(t) = tables.get(&table) else { return Ok(Vec::new()) };
        Ok(t.range(prefix.to_vec()..)
            .take_while(|(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect())
    }
}

/// Single-file embedded store.
pub struct RedbStorage {
    db: Database,
}

fn fail(e: impl std::fmt::Display) -> StorageError {
    StorageError(e.to_string())
}

fn def(table: Table) -> TableDefinition<'static, &'static [u8], &'static [u8]> {
    TableDefinition::new(table.name())
}

impl RedbStorage {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StorageError> {
        let db = Database::create(path).map_err(fail)?;
        let tx = db.begin_write().map_err(fail)?;
        for t in Table::ALL {
            tx.open_table(def(t)).map_err(fail)?;
        }
        tx.commit().map_err(fail)?;
        Ok(RedbStorage { db })
    }
}

impl Storage for RedbStorage {
    fn put_batch(&self, writes: Vec<(Table, Vec<u8>, Vec<u8>)>) -> Result<(), StorageError> {
        let tx = self.db.begin_write().map_err(fail)?;
        for (t, k, v) in &writes {
            let mut table = tx.open_table(def(*t)).map_err(fail)?;
            table.insert(k.as_slice(), v.as_slice()).map_err(fail)?;
        }
        tx.commit().map_err(fail)
    }

    fn get(&self, table: Table, key: &[u8]) -> Result<Option<Vec<u8>>, StorageError> {
        let tx = self.db.begin_read().map_err(fail)?;
        let t = tx.open_table(def(table)).map_err(fail)?;
        Ok(t.get(key).map_err(fail)?.map(|v| v.value().to_vec()))
    }

    fn scan(&self, table: Table, prefix: &[u8]) -> Result<Vec<Entry>, StorageError> {
        let tx = self.db.begin_read().map_err(fail)?;
        let t = tx.open_table(def(table)).map_err(fail)?;
        let mut out = Vec::new();
        for item in t.range(prefix..).map_err(fail)? {
            let (k, v) = item.map_err(fail)?;
            if !k.value().starts_with(prefix) {
                break;
            }
            out.push((k.value().to_vec(), v.value().to_vec()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exercise(s: &dyn Storage) {
        s.put(Table::Meta, b"a/1", b"x").unwrap();
        s.put_batch(vec![(Table::Meta, b"a/2".to_vec(), b"y".to_vec()), (Table::Meta, b"b/1".to_vec(), b"z".to_vec())])
            .unwrap();
        assert_eq!(s.get(Table::Meta, b"a/2").unwrap(), Some(b"y".to_vec()));
        assert_eq!(s.get(Table::Blobs, b"a/2").unwrap(), None);
        let keys: Vec<_> = s.scan(Table::Meta, b"a/").unwrap().into_iter().map(|(k, _)| k).collect();
        assert_eq!(keys, [b"a/1".to_vec(), b"a/2".to_vec()]);
    }

    #[test]
    fn memory_backend() {
        exercise(&MemoryStorage::new());
    }

    #[test]
    fn redb_backend_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prov.redb");
        exercise(&RedbStorage::open(&path).unwrap());
        let again = RedbStorage::open(&path).unwrap();
        assert_eq!(again.get(Table::Meta, b"b/1").unwrap(), Some(b"z".to_vec()));
    }
}
