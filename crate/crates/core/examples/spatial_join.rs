//! Attach neighborhood attributes to complaint points and count per borough.

use urbanflow::layers::{load_geo, load_table, GeoExpect, TableHints};
use urbanflow::ops::{group_by, spatial_join, AggFunc, AggSpec, JoinHow};
use urbanflow::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let complaints = load_table(synth::complaints_csv(1000, 42).as_bytes(), &TableHints::point("lon", "lat"))?;
    let hoods = load_geo(synth::neighborhoods_geojson(42).as_bytes(), GeoExpect::Mesh2d)?;

    let located = spatial_join(&complaints, &hoods, JoinHow::Inner)?;
    println!("{} of {} complaints fall inside a neighborhood", located.len(), complaints.len());

    let per_borough = group_by(&located, &["borough".into()], &[AggSpec::new("id", AggFunc::Count)])?;
    for r in per_borough.records() {
        println!("{} {}", r[0].display(), r[1].display());
    }
    Ok(())
}
