//! Deterministic synthetic city data for demos, examples and benchmarks.
//!
//! The city is a lattice of square neighborhoods. Boroughs are lattice
//! columns. Every generator takes a seed and returns file text in the format
//! the matching loader reads.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonical::format_decimal;
use crate::geometry::BBox;

pub const WEST: f64 = -71.20;
pub const SOUTH: f64 = 42.25;
pub const HOOD_COLS: usize = 5;
pub const HOOD_ROWS: usize = 4;
/// Neighborhood edge length in degrees.
pub const HOOD_SIZE: f64 = 0.04;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hood_count() -> usize {
    HOOD_COLS * HOOD_ROWS
}

pub fn hood_name(i: usize) -> String {
    format!("N{:02}", i + 1)
}

pub fn borough_of(i: usize) -> String {
    format!("B{}", i % HOOD_COLS + 1)
}

pub fn hood_bbox(i: usize) -> BBox {
    let (row, col) = (i / HOOD_COLS, i % HOOD_COLS);
    let min_lon = WEST + col as f64 * HOOD_SIZE;
    let min_lat = SOUTH + row as f64 * HOOD_SIZE;
    BBox { min_lon, min_lat, max_lon: min_lon + HOOD_SIZE, max_lat: min_lat + HOOD_SIZE }
}

pub fn city_bbox() -> BBox {
    BBox {
        min_lon: WEST,
        min_lat: SOUTH,
        max_lon: WEST + HOOD_COLS as f64 * HOOD_SIZE,
        max_lat: SOUTH + HOOD_ROWS as f64 * HOOD_SIZE,
    }
}

/// Index of the neighborhood containing the point; shared edges go to the
/// lowest index.
pub fn hood_at(lon: f64, lat: f64) -> Option<usize> {
    (0..hood_count()).find(|&i| hood_bbox(i).contains([lon, lat]))
}

fn ring(b: &BBox) -> String {
    let pts = [
        [b.min_lon, b.min_lat],
        [b.max_lon, b.min_lat],
        [b.max_lon, b.max_lat],
        [b.min_lon, b.max_lat],
        [b.min_lon, b.min_lat],
    ];
    let coords: Vec<String> = pts.iter().map(|p| format!("[{},{}]", format_decimal(p[0]), format_decimal(p[1]))).collect();
    format!("[[{}]]", coords.join(","))
}

fn feature(props: &str, b: &BBox) -> String {
    format!(r#"{{"type":"Feature","properties":{{{props}}},"geometry":{{"type":"Polygon","coordinates":{}}}}}"#, ring(b))
}

/// Population over 65 per neighborhood.
pub fn seniors(seed: u64) -> Vec<f64> {
    let mut r = rng(seed ^ 0x5e);
    (0..hood_count()).map(|_| (r.gen_range(200..4000) as f64).round()).collect()
}

/// Neighborhood polygons with `hood`, `borough` and `seniors` properties.
pub fn neighborhoods_geojson(seed: u64) -> String {
    let pop = seniors(seed);
    let features: Vec<String> = (0..hood_count())
        .map(|i| {
            let props = format!(r#""hood":"{}","borough":"{}","seniors":{}"#, hood_name(i), borough_of(i), pop[i]);
            feature(&props, &hood_bbox(i))
        })
        .collect();
    format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
}

pub fn boroughs_csv() -> String {
    let mut out = String::from("borough\n");
    for b in 0..HOOD_COLS {
        writeln!(out, "B{}", b + 1).unwrap();
    }
    out
}

fn point_in_city(r: &mut ChaCha8Rng) -> (f64, f64) {
    let b = city_bbox();
    let lon = r.gen_range(b.min_lon..b.max_lon);
    let lat = r.gen_range(b.min_lat..b.max_lat);
    // Six decimals keep the text form exact enough to reason about.
    ((lon * 1e6).round() / 1e6, (lat * 1e6).round() / 1e6)
}

pub const COMPLAINT_KINDS: [&str; 3] = ["noise", "heat", "rodent"];

/// Point events `id,lon,lat,kind`.
pub fn complaints_csv(n: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut out = String::from("id,lon,lat,kind\n");
    for i in 0..n {
        let (lon, lat) = point_in_city(&mut r);
        let kind = COMPLAINT_KINDS[r.gen_range(0..COMPLAINT_KINDS.len())];
        writeln!(out, "{i},{},{},{kind}", format_decimal(lon), format_decimal(lat)).unwrap();
    }
    out
}

pub const IMAGE_CLASSES: [&str; 4] = ["p_building", "p_tree", "p_road", "p_sky"];

/// Geotagged image manifest with per-class prediction probabilities that
/// sum to one (three decimals).
pub fn images_csv(n: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let mut out = format!("path,lon,lat,{}\n", IMAGE_CLASSES.join(","));
    for i in 0..n {
        let (lon, lat) = point_in_city(&mut r);
        let mut w: Vec<u32> = (0..IMAGE_CLASSES.len()).map(|_| r.gen_range(1..1000)).collect();
        let sum: u32 = w.iter().sum();
        // Integer thousandths that add up to exactly 1000.
        let mut parts: Vec<u32> = w.iter_mut().map(|x| *x * 1000 / sum).collect();
        let short = 1000 - parts.iter().sum::<u32>();
        parts[0] += short;
        let probs: Vec<String> = parts.iter().map(|p| format_decimal(*p as f64 / 1000.0)).collect();
        writeln!(out, "img_{i:04}.jpg,{},{},{}", format_decimal(lon), format_decimal(lat), probs.join(",")).unwrap();
    }
    out
}

/// Square building footprints with `bid` and `height` (meters).
pub fn buildings_geojson(n: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let features: Vec<String> = (0..n)
        .map(|i| {
            let (lon, lat) = point_in_city(&mut r);
            let half = 0.0004;
            let b = BBox { min_lon: lon - half, min_lat: lat - half, max_lon: lon + half, max_lat: lat + half };
            let height = r.gen_range(6..60);
            feature(&format!(r#""bid":"b{i:03}","height":{height}"#, i = i), &b)
        })
        .collect();
    format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
}

/// Cells per neighborhood edge in [`radiant_grid_asc`].
pub const GRID_PER_HOOD: usize = 4;

/// Mean radiant temperature raster over the city, ESRI ASCII grid. Cell
/// edges align with neighborhood edges; a few cells are no-data.
pub fn radiant_grid_asc(seed: u64) -> String {
    let mut r = rng(seed);
    let ncols = HOOD_COLS * GRID_PER_HOOD;
    let nrows = HOOD_ROWS * GRID_PER_HOOD;
    let cell = HOOD_SIZE / GRID_PER_HOOD as f64;
    let mut out = format!(
        "ncols {ncols}\nnrows {nrows}\nxllcorner {}\nyllcorner {}\ncellsize {}\nNODATA_value -9999\n",
        format_decimal(WEST),
        format_decimal(SOUTH),
        format_decimal(cell)
    );
    for row in 0..nrows {
        let cells: Vec<String> = (0..ncols)
            .map(|col| {
                if r.gen_bool(0.03) {
                    "-9999".to_string()
                } else {
                    // Warmer toward the south-east.
                    let base = 30.0 + col as f64 * 0.4 + row as f64 * 0.3;
                    format_decimal(((base + r.gen_range(-3.0..3.0)) * 10.0f64).round() / 10.0)
                }
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{load_geo, load_grid, load_image_manifest, load_table, GeoExpect, LayerKind, TableHints};

    #[test]
    fn generators_load() {
        let hoods = load_geo(neighborhoods_geojson(1).as_bytes(), GeoExpect::Mesh2d).unwrap();
        assert_eq!(hoods.len(), 20);
        let hints = TableHints { lon: Some("lon".into()), lat: Some("lat".into()), ..Default::default() };
        assert_eq!(load_table(complaints_csv(50, 2).as_bytes(), &hints).unwrap().kind(), LayerKind::Point);
        assert_eq!(load_image_manifest(images_csv(10, 3).as_bytes()).unwrap().len(), 10);
        assert_eq!(load_geo(buildings_geojson(12, 4).as_bytes(), GeoExpect::Mesh2d).unwrap().len(), 12);
        let grid = load_grid(radiant_grid_asc(5).as_bytes()).unwrap();
        assert_eq!(grid.len(), 20 * 16);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(images_csv(5, 9), images_csv(5, 9));
        assert_ne!(images_csv(5, 9), images_csv(5, 10));
    }

    #[test]
    fn hood_lookup() {
        assert_eq!(hood_at(WEST + 0.001, SOUTH + 0.001), Some(0));
        assert_eq!(hood_at(WEST + HOOD_SIZE, SOUTH + 0.001), Some(0));
        assert_eq!(hood_at(WEST - 1.0, SOUTH), None);
        assert_eq!(borough_of(6), "B2");
    }
}
