//! What if building b007 were taller? Sweeps the height slider on the
//! set_where node and shows that only the downstream branch recomputes.

use std::collections::BTreeMap;
use std::sync::Arc;

use urbanflow::annotations::{render, WidgetValue};
use urbanflow::engine::{BuiltinExecutor, Engine, RunContext};
use urbanflow::geometry::Geometry;
use urbanflow::model::{apply_mutation, Mutation};
use urbanflow::provenance::ProvenanceStore;
use urbanflow::scenarios::{self, WHAT_IF_BUILDING};
use urbanflow::views::{render_view, ViewContent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut spec = scenarios::what_if_height(60, 5)?;
    let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("what-if")), Arc::new(BuiltinExecutor::default()));
    let sel = BTreeMap::new();
    let ctx = RunContext::new("ana", &sel);
    engine.run_dataflow(&spec, &ctx)?;

    for height in [20.0, 60.0, 120.0, 200.0] {
        let m = Mutation::SetWidgetValues { id: "what_if".into(), values: [(0, WidgetValue::Number(height))].into() };
        spec = apply_mutation(&spec, &m)?;
        let before = engine.invocations();
        let results = engine.run_dataflow(&spec, &ctx)?;
        let rerun: Vec<&str> = results.iter().filter(|r| !r.cache_hit).map(|r| r.node_id.as_str()).collect();

        let layer = engine.layer(&engine.outputs_of(&"extrude".into()).unwrap()[0]).unwrap();
        let (bid, g) = (layer.attr_index("bid").unwrap(), layer.geometry_index().unwrap());
        let record = layer.records().iter().find(|r| r[bid].display() == WHAT_IF_BUILDING).unwrap();
        let z = match record[g].as_geometry() {
            Some(Geometry::PolygonZ(rings)) => rings[0][0][2],
            _ => f64::NAN,
        };
        let node = spec.node(&"city_3d".into()).unwrap();
        let code = render(&node.canonical_code, &node.widget_values)?;
        let has_3d = matches!(render_view(Some(&code), &layer, None)?.content, ViewContent::Map { has_3d: true, .. });
        println!(
            "height {height:>5}: {WHAT_IF_BUILDING} roof at z={z:<5} 3d={has_3d}  invocations +{} {rerun:?}",
            engine.invocations() - before
        );
    }
    Ok(())
}
