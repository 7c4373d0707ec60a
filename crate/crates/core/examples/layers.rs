//! Load every layer kind from synthetic files and round-trip one through the
//! wire envelope.

use urbanflow::layers::{deserialize_layer, load_geo, load_grid, load_image_manifest, load_table, serialize_layer, GeoExpect, TableHints};
use urbanflow::synth;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layers = [
        ("boroughs", load_table(synth::boroughs_csv().as_bytes(), &TableHints::default())?),
        ("complaints", load_table(synth::complaints_csv(200, 1).as_bytes(), &TableHints::point("lon", "lat"))?),
        ("neighborhoods", load_geo(synth::neighborhoods_geojson(1).as_bytes(), GeoExpect::Mesh2d)?),
        ("radiant temperature", load_grid(synth::radiant_grid_asc(1).as_bytes())?),
        ("street images", load_image_manifest(synth::images_csv(50, 1).as_bytes())?),
    ];
    for (name, layer) in &layers {
        let attrs: Vec<&str> = layer.schema().iter().map(|a| a.name.as_str()).collect();
        println!("{name:<20} {:<6} {:>4} records  {}", layer.kind().to_string(), layer.len(), attrs.join(", "));
    }

    let (_, grid) = &layers[3];
    let bytes = serialize_layer(grid);
    let back = deserialize_layer(&bytes)?;
    assert_eq!(&back, grid);
    println!("grid envelope: {} bytes, hash {}", bytes.len(), back.content_hash());
    Ok(())
}
