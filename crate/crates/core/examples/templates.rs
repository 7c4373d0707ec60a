//! The builtin template catalog, plus exporting and re-importing a custom
//! template.

use urbanflow::model::NodeKind;
use urbanflow::ops::TemplateRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry = TemplateRegistry::with_builtins();
    for t in registry.list(None) {
        println!("{:<28} {:<14} {}", t.template_id, format!("{:?}", t.kind), t.description);
    }

    let mut t = registry.require("transform.scale")?;
    t.template_id = "transform.double_height".into();
    t.canonical_code = r#"{"op":"scale","column":"height","factor":$[slider,Factor,1,4,0.5,2]}"#.into();
    t.description = "Scale building heights".into();
    let bytes = t.export();

    let team = TemplateRegistry::new();
    let id = team.import(&bytes)?;
    let node = team.require(&id)?.instantiate("taller");
    println!("\nimported {id}; node {} has {} transform template(s) available", node.id, team.list(Some(NodeKind::Transform)).len());
    assert!(team.import(&bytes).is_err(), "duplicate ids are rejected");
    Ok(())
}
