//! Which street images is the classifier least sure about, and where are
//! they? Runs the flow and prints the top of the gallery plus the
//! per-neighborhood means. Pass a directory to also write the view
//! descriptors there as JSON.

use std::collections::BTreeMap;
use std::sync::Arc;

use urbanflow::annotations::render;
use urbanflow::engine::{BuiltinExecutor, Engine, RunContext};
use urbanflow::provenance::ProvenanceStore;
use urbanflow::scenarios;
use urbanflow::views::{render_view, ViewContent, ViewDescriptor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1);
    let spec = scenarios::image_uncertainty(400, 21)?;
    let engine = Engine::new(Arc::new(ProvenanceStore::in_memory("images")), Arc::new(BuiltinExecutor::default()));
    let sel = BTreeMap::new();
    let started = std::time::Instant::now();
    for r in engine.run_dataflow(&spec, &RunContext::new("ana", &sel))? {
        println!("{:<12} {:?} {} ms", r.node_id.as_str(), r.status, r.duration_ms);
    }
    println!("ran in {:.2?}", started.elapsed());

    let view = |id: &str| -> Result<ViewDescriptor, Box<dyn std::error::Error>> {
        let node = spec.node(&id.into()).unwrap();
        let layer = engine.layer(&engine.outputs_of(&node.id).unwrap()[0]).unwrap();
        Ok(render_view(Some(&render(&node.canonical_code, &node.widget_values)?), &layer, None)?)
    };

    let gallery = view("gallery")?;
    if let ViewContent::Gallery { items, .. } = &gallery.content {
        println!("\nmost uncertain images:");
        for it in items.iter().take(8) {
            println!("  {} {:.3}", it.image, it.value.unwrap_or(f64::NAN));
        }
    }
    let chart = view("hood_chart")?;
    if let ViewContent::Chart { marks, .. } = &chart.content {
        println!("\nmean uncertainty per neighborhood:");
        for m in marks {
            println!("  {} {:.3}", m.x.as_str().unwrap_or("?"), m.y.as_f64().unwrap_or(f64::NAN));
        }
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(&dir)?;
        for id in ["gallery", "image_map", "hood_chart"] {
            std::fs::write(format!("{dir}/{id}.json"), view(id)?.to_bytes())?;
        }
        println!("\nview descriptors written to {dir}");
    }
    Ok(())
}
