//! Selections on interaction nodes and their propagation over key links.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{AttributeDef, DataLayer, Dtype, LayerError, Value, ValueKey};
use crate::model::{DataflowSpec, InteractionDependency, NodeId};

/// Name of the boolean attribute added by [`augment`].
pub const SELECTION_ATTR: &str = "interaction";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionState {
    pub interaction_node: NodeId,
    pub selected: BTreeSet<usize>,
    pub revision: u64,
}

impl SelectionState {
    pub fn new(node: impl Into<NodeId>) -> Self {
        SelectionState { interaction_node: node.into(), selected: BTreeSet::new(), revision: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub from: NodeId,
    pub to: NodeId,
    pub local_key_attr: String,
    pub remote_key_attr: String,
}

impl LinkSpec {
    /// The key link of an interaction-to-interaction dependency, if any.
    pub fn of(dep: &InteractionDependency) -> Option<LinkSpec> {
        let keys = dep.link.as_ref()?;
        Some(LinkSpec {
            from: dep.endpoint_a.clone(),
            to: dep.endpoint_b.clone(),
            local_key_attr: keys.local_key_attr.clone(),
            remote_key_attr: keys.remote_key_attr.clone(),
        })
    }

    pub fn all(spec: &DataflowSpec) -> Vec<LinkSpec> {
        spec.interaction_deps.iter().filter_map(LinkSpec::of).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Replace,
    Toggle,
    Clear,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InteractionError {
    #[error("layer already has an attribute named {0}")]
    AttrCollision(String),
    #[error("record {0} does not exist")]
    UnknownRecordId(usize),
    #[error("link key attribute {attr} missing on {node}")]
    UnknownLinkKeyAttr { node: NodeId, attr: String },
    #[error("no input layer for interaction node {0}")]
    UnknownNode(NodeId),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

/// The input layer plus a boolean `interaction` column, true on selected ids.
pub fn augment(layer: &DataLayer, state: &SelectionState) -> Result<DataLayer, InteractionError> {
    if layer.attr_index(SELECTION_ATTR).is_some() {
        return Err(InteractionError::AttrCollision(SELECTION_ATTR.into()));
    }
    if let Some(&bad) = state.selected.iter().find(|&&id| id >= layer.len()) {
        return Err(InteractionError::UnknownRecordId(bad));
    }
    let mut schema = layer.schema().to_vec();
    schema.push(AttributeDef::new(SELECTION_ATTR, Dtype::Boolean));
    let records = layer
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.push(Value::Bool(state.selected.contains(&i)));
            r
        })
        .collect();
    Ok(DataLayer::new(layer.kind(), schema, records, layer.grid_meta().copied())?)
}

/// Apply a user pick. `record_count` is the size of the node's input layer.
/// The revision is bumped on every call.
pub fn apply_selection(
    state: &SelectionState,
    ids: &BTreeSet<usize>,
    mode: SelectionMode,
    record_count: usize,
) -> Result<SelectionState, InteractionError> {
    if mode != SelectionMode::Clear {
        if let Some(&bad) = ids.iter().find(|&&id| id >= record_count) {
            return Err(InteractionError::UnknownRecordId(bad));
        }
    }
    let selected = match mode {
        SelectionMode::Replace => ids.clone(),
        SelectionMode::Toggle => state.selected.symmetric_difference(ids).copied().collect(),
        SelectionMode::Clear => BTreeSet::new(),
    };
    Ok(SelectionState { interaction_node: state.interaction_node.clone(), selected, revision: state.revision + 1 })
}

/// Breadth-first from `origin` over `links` in both directions. Each reached
/// node's selection becomes the records whose key value matches a key value
/// of the sender's selection; every node is visited once. Revisions move only
/// when a selection actually changes. Returns the nodes whose state changed.
pub fn propagate(
    origin: &NodeId,
    states: &mut BTreeMap<NodeId, SelectionState>,
    links: &[LinkSpec],
    layers: &BTreeMap<NodeId, &DataLayer>,
) -> Result<Vec<NodeId>, InteractionError> {
    let key_col = |node: &NodeId, attr: &str| -> Result<usize, InteractionError> {
        let layer = layers.get(node).ok_or_else(|| InteractionError::UnknownNode(node.clone()))?;
        layer
            .attr_index(attr)
            .ok_or_else(|| InteractionError::UnknownLinkKeyAttr { node: node.clone(), attr: attr.into() })
    };
    // (neighbor, sender column, neighbor column) per node, in link order.
    let mut adjacency: BTreeMap<&NodeId, Vec<(&NodeId, usize, usize)>> = BTreeMap::new();
    for link in links {
        let a = key_col(&link.from, &link.local_key_attr)?;
        let b = key_col(&link.to, &link.remote_key_attr)?;
        adjacency.entry(&link.from).or_default().push((&link.to, a, b));
        adjacency.entry(&link.to).or_default().push((&link.from, b, a));
    }

    let mut changed = Vec::new();
    let mut visited: HashSet<&NodeId> = HashSet::from([origin]);
    let mut queue: VecDeque<&NodeId> = VecDeque::from([origin]);
    while let Some(sender) = queue.pop_front() {
        let Some(neighbors) = adjacency.get(sender) else { continue };
        for &(receiver, sender_col, receiver_col) in neighbors {
            if !visited.insert(receiver) {
                continue;
            }
            let sender_layer = layers[sender];
            let keys: HashSet<ValueKey> = states
                .get(sender)
                .map(|s| s.selected.iter().filter_map(|&i| sender_layer.records().get(i)?[sender_col].key()).collect())
                .unwrap_or_default();
            let selected: BTreeSet<usize> = layers[receiver]
                .records()
                .iter()
                .enumerate()
                .filter(|(_, r)| r[receiver_col].key().is_some_and(|k| keys.contains(&k)))
                .map(|(i, _)| i)
                .collect();
            let state = states.entry(receiver.clone()).or_insert_with(|| SelectionState::new(receiver.clone()));
            if state.selected != selected {
                state.selected = selected;
                state.revision += 1;
                changed.push(receiver.clone());
            }
            queue.push_back(receiver);
        }
    }
    Ok(changed)
}
