//! Version trees, rollback, log replay and PROV export for a small session.

use std::collections::BTreeMap;
use std::sync::Arc;

use urbanflow::engine::{BuiltinExecutor, Engine, RunContext};
use urbanflow::model::{apply_mutation, DataDependency, DataflowSpec, Edge, Mutation, NodeKind, NodeSpec, PortKinds};
use urbanflow::provenance::{export_prov, prov_problems, ProvenanceStore, VersionTree};

fn print_tree(t: &VersionTree, depth: usize) {
    let marker = if t.current { "*" } else { " " };
    println!("{marker} {}{} {}", "  ".repeat(depth), &t.version.id.as_str()[..10], t.version.code);
}

fn walk(t: &VersionTree, depth: usize) {
    print_tree(t, depth);
    for c in &t.children {
        walk(c, depth + 1);
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let store = Arc::new(ProvenanceStore::in_memory("demo"));
    let mut spec = DataflowSpec::empty("demo", "demo");
    store.genesis("ana", &spec)?;
    let mut commit = |user: &str, m: Mutation| -> Result<(), Box<dyn std::error::Error>> {
        spec = apply_mutation(&spec, &m)?;
        store.record_transaction(user, Some(&m), &spec)?;
        Ok(())
    };

    let load = NodeSpec::new("load", NodeKind::Loader, "load.csv", r#"{"op":"load_csv","data":"v\n1\n2\n"}"#, vec![], vec![PortKinds::any()]);
    let scale = |f: u32| format!(r#"{{"op":"scale","column":"v","factor":{f}}}"#);
    let x = NodeSpec::new("x", NodeKind::Transform, "transform.scale", scale(2), vec![PortKinds::any()], vec![PortKinds::any()]);
    commit("ana", Mutation::AddNode { node: load, rect: None })?;
    commit("ana", Mutation::AddNode { node: x, rect: None })?;
    commit("ana", Mutation::AddEdge { edge: Edge::Data(DataDependency::new("load", "x")) })?;
    commit("ben", Mutation::UpdateCode { id: "x".into(), code: scale(3) })?;
    commit("ben", Mutation::UpdateCode { id: "x".into(), code: scale(5) })?;

    // Back to the first edit, then branch from there.
    let first_edit = store.version_tree(&"x".into())?.children[0].version.id.clone();
    commit("ana", store.rollback_mutation(&"x".into(), &first_edit)?)?;
    commit("ana", Mutation::UpdateCode { id: "x".into(), code: scale(7) })?;
    walk(&store.version_tree(&"x".into())?, 0);

    let engine = Engine::new(store.clone(), Arc::new(BuiltinExecutor::default()));
    let sel = BTreeMap::new();
    engine.run_dataflow(&spec, &RunContext::new("ana", &sel))?;

    for tx in store.transactions(None)? {
        println!("tx {:>2} {:<4} {}", tx.seq, tx.user, tx.summary);
    }
    assert_eq!(store.replay()?.to_canonical_bytes(), spec.to_canonical_bytes());

    let doc = export_prov(&store, None)?;
    let count = |k: &str| doc[k].as_object().map_or(0, |m| m.len());
    println!(
        "PROV: {} entities, {} activities, {} agents, problems {:?}",
        count("entity"),
        count("activity"),
        count("agent"),
        prov_problems(&doc)
    );
    Ok(())
}
