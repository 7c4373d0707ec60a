//! Pick boroughs and watch the selection flow to neighborhoods and
//! complaints over key links, then render the complaint map.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use urbanflow::engine::{BuiltinExecutor, Engine, RunContext};
use urbanflow::interaction::{apply_selection, propagate, LinkSpec, SelectionMode, SelectionState};
use urbanflow::layers::DataLayer;
use urbanflow::model::NodeId;
use urbanflow::provenance::ProvenanceStore;
use urbanflow::scenarios;
use urbanflow::views::{render_view, ViewContent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = scenarios::linked_boroughs(500, 3)?;
    let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("demo")), Arc::new(BuiltinExecutor::default()));
    let none = BTreeMap::new();

    let picks = ["pick_borough", "pick_hood", "pick_complaint"];
    let mut inputs = BTreeMap::new();
    for p in picks {
        let layers = engine.input_layers(&spec, &p.into(), &RunContext::new("ana", &none))?;
        inputs.insert(NodeId::from(p), layers[0].clone());
    }
    let layers: BTreeMap<NodeId, &DataLayer> = inputs.iter().map(|(k, v)| (k.clone(), v.as_ref())).collect();

    let mut states: BTreeMap<NodeId, SelectionState> = picks.iter().map(|p| (NodeId::from(*p), SelectionState::new(*p))).collect();
    let origin = NodeId::from("pick_borough");
    // Boroughs B2 and B4.
    let ids: BTreeSet<usize> = [1, 3].into();
    let picked = apply_selection(&states[&origin], &ids, SelectionMode::Replace, inputs[&origin].len())?;
    states.insert(origin.clone(), picked);
    let changed = propagate(&origin, &mut states, &LinkSpec::all(&spec), &layers)?;
    println!("changed: {changed:?}");
    for (node, s) in &states {
        println!("{node:<16} {:>4} of {:>4} selected (revision {})", s.selected.len(), inputs[node].len(), s.revision);
    }

    engine.run_dataflow(&spec, &RunContext::new("ana", &states))?;
    let out = engine.layer(&engine.outputs_of(&"complaint_map".into()).unwrap()[0]).unwrap();
    let code = spec.node(&"complaint_map".into()).unwrap().canonical_code.clone();
    if let ViewContent::Map { features, .. } = render_view(Some(&code), &out, None)?.content {
        let lit = features.iter().filter(|f| f.selected).count();
        println!("complaint map: {lit} of {} points highlighted", features.len());
    }
    Ok(())
}
