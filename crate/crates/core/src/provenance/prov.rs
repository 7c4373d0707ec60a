//! W3C PROV-JSON export.
//!
//! Users are agents. Nodes, node versions, layer instances and their
//! attributes are entities. Dataflow and node executions are activities.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Map, Value as Json};

use super::{ExecutionKind, ProvError, ProvenanceStore};
use crate::canonical::ContentHash;
use crate::model::{Mutation, NodeId};

fn agent_id(user: &str) -> String {
    format!("uf:user/{user}")
}

fn node_id(n: &NodeId) -> String {
    format!("uf:node/{n}")
}

fn version_id(n: &NodeId, v: &ContentHash) -> String {
    format!("uf:version/{n}/{v}")
}

fn layer_id(h: &ContentHash) -> String {
    format!("uf:layer/{h}")
}

fn exec_id(seq: u64) -> String {
    format!("uf:execution/{seq}")
}

#[derive(Default)]
struct Relations(BTreeMap<&'static str, Map<String, Json>>);

impl Relations {
    fn add(&mut self, kind: &'static str, body: Json) {
        let map = self.0.entry(kind).or_default();
        let id = format!("_:{kind}{}", map.len());
        map.insert(id, body);
    }
}

/// PROV-JSON document for the workspace, optionally restricted to the
/// transactions `from..=to` and the executions and versions they cover.
pub fn export_prov(store: &ProvenanceStore, range: Option<(u64, u64)>) -> Result<Json, ProvError> {
    let within = |seq: u64| range.is_none_or(|(a, b)| seq >= a && seq <= b);
    let txs = store.transactions(range)?;
    let execs: Vec<_> = store.executions()?.into_iter().filter(|e| within(e.tx_seq)).collect();

    let mut agents: BTreeSet<String> = BTreeSet::new();
    let mut nodes: BTreeSet<NodeId> = BTreeSet::new();
    let mut entities = Map::new();
    let mut activities = Map::new();
    let mut rel = Relations::default();

    for tx in &txs {
        agents.insert(tx.user.clone());
        if let Some(Mutation::AddNode { node, .. }) = &tx.mutation {
            nodes.insert(node.id.clone());
        }
    }
    for e in &execs {
        if let Some(n) = &e.node_id {
            nodes.insert(n.clone());
        }
    }

    for n in &nodes {
        for v in store.versions(n)?.into_iter().filter(|v| within(v.created_in)) {
            if !v.created_by.is_empty() {
                agents.insert(v.created_by.clone());
            }
            let id = version_id(n, &v.id);
            entities.insert(
                id.clone(),
                json!({
                    "prov:type": "uf:NodeVersion",
                    "uf:node": node_id(n),
                    "uf:template": v.template_id,
                    "uf:code": v.code,
                    "prov:generatedAtTime": v.timestamp.to_rfc3339(),
                }),
            );
            if let Some(parent) = &v.parent {
                rel.add("wasDerivedFrom", json!({"prov:generatedEntity": id, "prov:usedEntity": version_id(n, parent)}));
            }
            if !v.created_by.is_empty() {
                rel.add("wasAttributedTo", json!({"prov:entity": id, "prov:agent": agent_id(&v.created_by)}));
            }
        }
        entities.insert(node_id(n), json!({"prov:type": "uf:Node", "prov:label": n.as_str()}));
    }

    // Parents of versions created outside the range must still resolve.
    let wanted: Vec<String> = rel
        .0
        .get("wasDerivedFrom")
        .map(|m| m.values().filter_map(|r| r["prov:usedEntity"].as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    for id in wanted {
        if !entities.contains_key(&id) {
            entities.insert(id, json!({"prov:type": "uf:NodeVersion"}));
        }
    }

    let mut layers: BTreeSet<ContentHash> = BTreeSet::new();
    for e in &execs {
        agents.insert(e.user.clone());
        let id = exec_id(e.seq);
        let mut attrs = json!({
            "prov:startTime": e.started.to_rfc3339(),
            "prov:endTime": e.ended.to_rfc3339(),
            "uf:dataflow_version": e.dataflow_version.as_str(),
            "uf:cached": e.cached,
            "uf:status": e.status,
        });
        match e.kind {
            ExecutionKind::Dataflow => attrs["prov:type"] = json!("uf:DataflowExecution"),
            ExecutionKind::Node => {
                attrs["prov:type"] = json!("uf:NodeExecution");
                if let Some(n) = &e.node_id {
                    attrs["uf:node"] = json!(node_id(n));
                    if let Some(v) = &e.node_version {
                        let vid = version_id(n, v);
                        entities.entry(vid.clone()).or_insert_with(|| json!({"prov:type": "uf:NodeVersion", "uf:node": node_id(n)}));
                        rel.add("used", json!({"prov:activity": id, "prov:entity": vid, "prov:role": "uf:code"}));
                    }
                }
                if let Some(p) = e.parent {
                    attrs["uf:parent"] = json!(exec_id(p));
                }
            }
        }
        activities.insert(id.clone(), attrs);
        rel.add("wasAssociatedWith", json!({"prov:activity": id, "prov:agent": agent_id(&e.user)}));
        for h in &e.consumed {
            rel.add("used", json!({"prov:activity": id, "prov:entity": layer_id(h)}));
            layers.insert(h.clone());
        }
        for h in &e.produced {
            rel.add("wasGeneratedBy", json!({"prov:entity": layer_id(h), "prov:activity": id}));
            layers.insert(h.clone());
        }
    }

    for h in &layers {
        let lid = layer_id(h);
        match store.layer_instance(h)? {
            Some(inst) => {
                entities.insert(
                    lid.clone(),
                    json!({
                        "prov:type": "uf:LayerInstance",
                        "uf:kind": inst.kind,
                        "uf:rows": inst.row_count,
                        "uf:capture": inst.capture,
                    }),
                );
                for a in &inst.schema {
                    let aid = format!("{lid}/{}", a.name);
                    let mut body = json!({"prov:type": "uf:Attribute", "prov:label": a.name, "uf:dtype": a.dtype});
                    if let Some(s) = inst.stats.get(&a.name) {
                        body["uf:stats"] = serde_json::to_value(s).expect("stats serialize");
                    }
                    entities.insert(aid.clone(), body);
                    rel.add("hadMember", json!({"prov:collection": lid, "prov:entity": aid}));
                }
            }
            None => {
                entities.insert(lid, json!({"prov:type": "uf:LayerInstance"}));
            }
        }
    }

    let agents: Map<String, Json> =
        agents.iter().map(|u| (agent_id(u), json!({"prov:type": "prov:Person", "prov:label": u}))).collect();

    let mut doc = json!({
        "prefix": {"uf": "urn:urbanflow:", "prov": "http://www.w3.org/ns/prov#"},
        "agent": agents,
        "entity": entities,
        "activity": activities,
    });
    for (kind, map) in rel.0 {
        doc[kind] = Json::Object(map);
    }
    Ok(doc)
}

/// Structural problems in a PROV-JSON document: activities without an
/// associated agent and relation endpoints that name no record.
pub fn prov_problems(doc: &Json) -> Vec<String> {
    let ids = |section: &str| -> BTreeSet<String> {
        doc.get(section).and_then(Json::as_object).map(|m| m.keys().cloned().collect()).unwrap_or_default()
    };
    let (agents, entities, activities) = (ids("agent"), ids("entity"), ids("activity"));
    let mut problems = Vec::new();
    let mut associated = BTreeSet::new();
    let endpoints: [(&str, &[(&str, &BTreeSet<String>)]); 6] = [
        ("used", &[("prov:activity", &activities), ("prov:entity", &entities)]),
        ("wasGeneratedBy", &[("prov:activity", &activities), ("prov:entity", &entities)]),
        ("wasAssociatedWith", &[("prov:activity", &activities), ("prov:agent", &agents)]),
        ("wasAttributedTo", &[("prov:entity", &entities), ("prov:agent", &agents)]),
        ("wasDerivedFrom", &[("prov:generatedEntity", &entities), ("prov:usedEntity", &entities)]),
        ("hadMember", &[("prov:collection", &entities), ("prov:entity", &entities)]),
    ];
    for (kind, fields) in endpoints {
        let Some(map) = doc.get(kind).and_then(Json::as_object) else { continue };
        for (rid, body) in map {
            for (field, pool) in fields {
                match body.get(*field).and_then(Json::as_str) {
                    Some(id) if pool.contains(id) => {
                        if kind == "wasAssociatedWith" && *field == "prov:activity" {
                            associated.insert(id.to_string());
                        }
                    }
                    other => problems.push(format!("{kind} {rid}: {field} -> {other:?}")),
                }
            }
        }
    }
    problems.extend(activities.difference(&associated).map(|a| format!("activity {a} has no agent")));
    problems
}
