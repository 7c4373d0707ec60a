//! Annotated code: parse the widget sites, list them as GUI widgets and
//! substitute chosen values.

use urbanflow::annotations::{parse_annotations, render, widget_descriptors, WidgetValue, WidgetValues};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let code = r#"{"op":"set_where","key":"bid","equals":"b007","column":"height","value":$[slider,Height,0,200,1,20]}
// an escaped $$[ stays literal and $[checkbox,Shadows,false] is a second widget"#;

    let sites = parse_annotations(code)?;
    for w in widget_descriptors(&sites, &WidgetValues::new())? {
        println!("#{} {:?} {:<8} current={}", w.ordinal, w.widget, w.label, serde_json::to_string(&w.current)?);
    }
    println!("{} sites", sites.len());

    println!("\ndefaults:\n{}", render(code, &WidgetValues::new())?);
    let chosen: WidgetValues = [(0, WidgetValue::Number(145.0)), (1, WidgetValue::Bool(true))].into_iter().collect();
    println!("\nchosen:\n{}", render(code, &chosen)?);

    match parse_annotations("$[slider,Height,0,200,1,999]") {
        Err(e) => println!("\nrejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
