//! Cleaning and aggregating a complaints table.

use urbanflow::layers::{load_table, TableHints};
use urbanflow::ops::{group_by, normalize, remove_duplicates, remove_missing, AggFunc, AggSpec, NormalizeMethod};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let csv = "hood,kind,minutes\nN01,noise,12\nN01,noise,12\nN01,heat,\nN02,noise,30\nN02,rodent,45\nN03,heat,8\n";
    let raw = load_table(csv.as_bytes(), &TableHints::default())?;

    let unique = remove_duplicates(&raw, &[])?;
    let complete = remove_missing(&unique, &["minutes".into()])?;
    println!("{} raw, {} unique, {} complete", raw.len(), unique.len(), complete.len());

    let aggs = [AggSpec::new("minutes", AggFunc::Mean), AggSpec::new("minutes", AggFunc::Count)];
    let per_hood = group_by(&complete, &["hood".into()], &aggs)?;
    let names: Vec<&str> = per_hood.schema().iter().map(|a| a.name.as_str()).collect();
    println!("{}", names.join("\t"));
    for r in per_hood.records() {
        let cells: Vec<String> = r.iter().map(|v| v.display()).collect();
        println!("{}", cells.join("\t"));
    }

    let scaled = normalize(&per_hood, "mean_minutes", NormalizeMethod::Minmax)?;
    let col = scaled.attr_index("mean_minutes").unwrap();
    let shares: Vec<String> = scaled.column(col).map(|v| v.display()).collect();
    println!("min-max scaled: {}", shares.join(", "));
    Ok(())
}
