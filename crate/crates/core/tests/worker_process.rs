use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use urbanflow::engine::{Engine, Executor, BuiltinExecutor, ProcessExecutor, RunContext, RunStatus};
use urbanflow::layers::{load_table, DataLayer, LayerKind, TableHints, Value};
use urbanflow::model::{apply_mutation, DataDependency, DataflowSpec, Edge, Mutation, NodeKind, NodeSpec, PortKinds};
use urbanflow::provenance::{ExecStatus, ProvenanceStore};

fn worker() -> ProcessExecutor {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/worker.py");
    ProcessExecutor::new("python3", vec![script.display().to_string()])
}

fn input() -> Arc<DataLayer> {
    Arc::new(load_table(b"name,v\na,1.5\nb,\nc,-2\n", &TableHints::default()).unwrap())
}

#[test]
fn worker_transforms_layers() {
    let out = worker().execute("negate:v", &[input()]).unwrap();
    assert_eq!(out.log, "processed 1 layers\n");
    let col: Vec<Option<f64>> = out.layers[0].column(1).map(Value::as_f64).collect();
    assert_eq!(col, [Some(-1.5), None, Some(2.0)]);
    // Untouched layers come back bit-identical.
    let echo = worker().execute("echo", &[input()]).unwrap();
    assert_eq!(echo.layers[0].content_hash(), input().content_hash());
}

#[test]
fn worker_failures_are_reported() {
    let err = worker().execute("fail", &[input()]).unwrap_err();
    assert!(err.contains("worker refused"), "{err}");
    let err = worker().execute("garbage", &[]).unwrap_err();
    assert!(err.contains("truncated"), "{err}");
    let missing = ProcessExecutor::new("/nonexistent/worker", vec![]);
    assert!(missing.execute("x", &[]).unwrap_err().contains("cannot start"));
}

#[test]
fn timeout_kills_the_worker() {
    let started = Instant::now();
    let err = worker().with_timeout(Duration::from_millis(300)).execute("sleep", &[]).unwrap_err();
    assert!(err.contains("timed out"), "{err}");
    assert!(started.elapsed() < Duration::from_secs(10));
}

#[test]
fn output_cap_kills_the_worker() {
    let err = worker().with_output_cap(1 << 20).execute("flood", &[]).unwrap_err();
    assert!(err.contains("exceeded"), "{err}");
}

#[test]
fn engine_records_worker_runs() {
    let prov = Arc::new(ProvenanceStore::in_memory("w"));
    let engine = Engine::new(prov.clone(), Arc::new(BuiltinExecutor::default()));
    engine.set_executor(NodeKind::Analysis, Arc::new(worker()));
    let mut spec = DataflowSpec::empty("w", "w");
    let load = NodeSpec::new("load", NodeKind::Loader, "load.csv", r#"{"op":"load_csv","data":"v\n3\n"}"#, vec![], vec![PortKinds::of(&[LayerKind::Table])]);
    let neg = NodeSpec::new("neg", NodeKind::Analysis, "script", "negate:v", vec![PortKinds::any()], vec![PortKinds::any()]);
    let bad = NodeSpec::new("bad", NodeKind::Analysis, "script", "fail", vec![PortKinds::any()], vec![PortKinds::any()]);
    for m in [
        Mutation::AddNode { node: load, rect: None },
        Mutation::AddNode { node: neg, rect: None },
        Mutation::AddNode { node: bad, rect: None },
        Mutation::AddEdge { edge: Edge::Data(DataDependency::new("load", "neg")) },
        Mutation::AddEdge { edge: Edge::Data(DataDependency::new("load", "bad")) },
    ] {
        spec = apply_mutation(&spec, &m).unwrap();
    }
    let sel = BTreeMap::new();
    let results = engine.run_dataflow(&spec, &RunContext::new("u", &sel)).unwrap();
    let by_id: BTreeMap<_, _> = results.iter().map(|r| (r.node_id.to_string(), r)).collect();
    assert_eq!(by_id["neg"].status, RunStatus::Ok);
    assert_eq!(engine.layer(&by_id["neg"].outputs[0]).unwrap().records()[0][0], Value::Number(-3.0));
    assert_eq!(by_id["bad"].status, RunStatus::Error);
    let failed = prov.executions().unwrap().into_iter().find(|e| e.node_id.as_ref().is_some_and(|n| n.as_str() == "bad")).unwrap();
    assert_eq!(failed.status, ExecStatus::Error);
    assert!(failed.log.contains("worker refused"));
}
