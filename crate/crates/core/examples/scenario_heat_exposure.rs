//! Where do many seniors live in hot neighborhoods? Averages a comfort
//! index from a radiant temperature raster per neighborhood, picks the hot
//! and old corner of the scatter plot and follows the selection to the map.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use urbanflow::annotations::render;
use urbanflow::engine::{BuiltinExecutor, Engine, RunContext};
use urbanflow::interaction::{apply_selection, propagate, LinkSpec, SelectionMode, SelectionState};
use urbanflow::layers::DataLayer;
use urbanflow::model::NodeId;
use urbanflow::provenance::ProvenanceStore;
use urbanflow::scenarios;
use urbanflow::views::{render_view, ViewContent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = scenarios::heat_exposure(8)?;
    let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("heat")), Arc::new(BuiltinExecutor::default()));
    let mut sel = BTreeMap::new();
    engine.run_dataflow(&spec, &RunContext::new("ana", &sel))?;

    let by_hood = engine.layer(&engine.outputs_of(&"by_hood".into()).unwrap()[0]).unwrap();
    let (s, u) = (by_hood.attr_index("seniors").unwrap(), by_hood.attr_index("mean_utci").unwrap());
    let rows: Vec<(usize, f64, f64)> = by_hood
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| (i, r[s].as_f64().unwrap(), r[u].as_f64().unwrap()))
        .collect();
    let picks: BTreeSet<usize> = rows.iter().filter(|r| r.1 > 2000.0 && r.2 > 32.0).map(|r| r.0).collect();
    println!("{} neighborhoods, picking {} with >2000 seniors and comfort index >32", rows.len(), picks.len());

    let (chart, map) = (NodeId::from("pick_chart"), NodeId::from("pick_map"));
    let ctx_sel = BTreeMap::new();
    let chart_in = engine.input_layers(&spec, &chart, &RunContext::new("ana", &ctx_sel))?.remove(0);
    let map_in = engine.input_layers(&spec, &map, &RunContext::new("ana", &ctx_sel))?.remove(0);
    let layers: BTreeMap<NodeId, &DataLayer> = [(chart.clone(), chart_in.as_ref()), (map.clone(), map_in.as_ref())].into();
    sel.insert(chart.clone(), apply_selection(&SelectionState::new(chart.clone()), &picks, SelectionMode::Replace, chart_in.len())?);
    sel.insert(map.clone(), SelectionState::new(map.clone()));
    propagate(&chart, &mut sel, &LinkSpec::all(&spec), &layers)?;
    engine.run_dataflow(&spec, &RunContext::new("ana", &sel))?;

    let node = spec.node(&"hood_map".into()).unwrap();
    let layer = engine.layer(&engine.outputs_of(&node.id).unwrap()[0]).unwrap();
    let hood = layer.attr_index("hood").unwrap();
    if let ViewContent::Map { features, .. } = render_view(Some(&render(&node.canonical_code, &node.widget_values)?), &layer, None)?.content {
        for f in features.iter().filter(|f| f.selected) {
            println!("  highlighted {} (color {:.2})", layer.records()[f.id][hood].display(), f.color.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
