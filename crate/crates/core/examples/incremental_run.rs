//! Content-addressed caching: a second run is free, and moving a slider
//! reruns only what sits downstream of it.

use std::collections::BTreeMap;
use std::sync::Arc;

use urbanflow::annotations::WidgetValue;
use urbanflow::engine::{BuiltinExecutor, Engine, NodeRunResult, RunContext};
use urbanflow::model::{apply_mutation, Mutation};
use urbanflow::provenance::ProvenanceStore;
use urbanflow::scenarios;

fn report(label: &str, engine: &Engine, results: &[NodeRunResult]) {
    let ran: Vec<&str> = results.iter().filter(|r| !r.cache_hit).map(|r| r.node_id.as_str()).collect();
    println!("{label:<14} invocations so far {:>2}  recomputed {ran:?}", engine.invocations());
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = scenarios::what_if_height(25, 9)?;
    let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("demo")), Arc::new(BuiltinExecutor::default()));
    let sel = BTreeMap::new();
    let ctx = RunContext::new("ana", &sel);

    report("first run", &engine, &engine.run_dataflow(&spec, &ctx)?);
    report("unchanged", &engine, &engine.run_dataflow(&spec, &ctx)?);

    let slide = Mutation::SetWidgetValues { id: "what_if".into(), values: [(0, WidgetValue::Number(120.0))].into() };
    spec = apply_mutation(&spec, &slide)?;
    report("slider to 120", &engine, &engine.run_dataflow(&spec, &ctx)?);

    let back = Mutation::SetWidgetValues { id: "what_if".into(), values: [(0, WidgetValue::Number(20.0))].into() };
    spec = apply_mutation(&spec, &back)?;
    report("slider back", &engine, &engine.run_dataflow(&spec, &ctx)?);

    let cached = engine.provenance().executions()?.iter().filter(|e| e.cached).count();
    println!("{cached} executions were served from cache");
    Ok(())
}
