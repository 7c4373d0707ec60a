//! Planar geometry values and the predicates the join and view code needs.
//!
//! Coordinates are `[lon, lat]` (or `[lon, lat, z]`) in EPSG:4326 degrees,
//! treated as a plane. Polygons are lists of rings, exterior first; ring
//! closure is optional.

use serde_json::{json, Value};

use crate::canonical::f64_value;

pub type Coord = [f64; 2];
pub type Coord3 = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(Coord),
    LineString(Vec<Coord>),
    MultiLineString(Vec<Vec<Coord>>),
    Polygon(Vec<Vec<Coord>>),
    MultiPolygon(Vec<Vec<Vec<Coord>>>),
    /// Polygon with a z coordinate per vertex (extruded footprints, roofs).
    PolygonZ(Vec<Vec<Coord3>>),
    MultiPolygonZ(Vec<Vec<Vec<Coord3>>>),
}

/// Axis-aligned envelope in degrees.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BBox {
    pub fn of_point(c: Coord) -> Self {
        BBox { min_lon: c[0], min_lat: c[1], max_lon: c[0], max_lat: c[1] }
    }

    pub fn extend(&mut self, c: Coord) {
        self.min_lon = self.min_lon.min(c[0]);
        self.min_lat = self.min_lat.min(c[1]);
        self.max_lon = self.max_lon.max(c[0]);
        self.max_lat = self.max_lat.max(c[1]);
    }

    pub fn union(&mut self, other: &BBox) {
        self.extend([other.min_lon, other.min_lat]);
        self.extend([other.max_lon, other.max_lat]);
    }

    pub fn contains(&self, c: Coord) -> bool {
        c[0] >= self.min_lon && c[0] <= self.max_lon && c[1] >= self.min_lat && c[1] <= self.max_lat
    }

    pub fn is_valid(&self) -> bool {
        self.min_lon <= self.max_lon && self.min_lat <= self.max_lat
    }
}

impl Geometry {
    pub fn is_3d(&self) -> bool {
        matches!(self, Geometry::PolygonZ(_) | Geometry::MultiPolygonZ(_))
    }

    pub fn is_polygonal(&self) -> bool {
        matches!(self, Geometry::Polygon(_) | Geometry::MultiPolygon(_))
    }

    pub fn is_lineal(&self) -> bool {
        matches!(self, Geometry::LineString(_) | Geometry::MultiLineString(_))
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Geometry::Point(_) => "Point",
            Geometry::LineString(_) => "LineString",
            Geometry::MultiLineString(_) => "MultiLineString",
            Geometry::Polygon(_) | Geometry::PolygonZ(_) => "Polygon",
            Geometry::MultiPolygon(_) | Geometry::MultiPolygonZ(_) => "MultiPolygon",
        }
    }

    /// All planar vertices (z dropped).
    pub fn coords(&self) -> Vec<Coord> {
        match self {
            Geometry::Point(c) => vec![*c],
            Geometry::LineString(line) => line.clone(),
            Geometry::MultiLineString(lines) => lines.concat(),
            Geometry::Polygon(rings) => rings.concat(),
            Geometry::MultiPolygon(polys) => polys.iter().flat_map(|p| p.concat()).collect(),
            Geometry::PolygonZ(rings) => rings.iter().flatten().map(|c| [c[0], c[1]]).collect(),
            Geometry::MultiPolygonZ(polys) => {
                polys.iter().flatten().flatten().map(|c| [c[0], c[1]]).collect()
            }
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        let coords = self.coords();
        let mut iter = coords.into_iter();
        let mut bbox = BBox::of_point(iter.next()?);
        for c in iter {
            bbox.extend(c);
        }
        Some(bbox)
    }

    /// 2D projection: z is dropped from 3D polygons, other shapes are unchanged.
    pub fn footprint(&self) -> Geometry {
        let drop = |ring: &Vec<Coord3>| ring.iter().map(|c| [c[0], c[1]]).collect::<Vec<_>>();
        match self {
            Geometry::PolygonZ(rings) => Geometry::Polygon(rings.iter().map(drop).collect()),
            Geometry::MultiPolygonZ(polys) => {
                Geometry::MultiPolygon(polys.iter().map(|p| p.iter().map(drop).collect()).collect())
            }
            other => other.clone(),
        }
    }

    /// Point-in-polygon with the boundary counted as inside. Non-polygonal
    /// geometries contain nothing.
    pub fn contains_point(&self, p: Coord) -> bool {
        match self {
            Geometry::Polygon(rings) => polygon_contains(rings, p),
            Geometry::MultiPolygon(polys) => polys.iter().any(|rings| polygon_contains(rings, p)),
            _ => false,
        }
    }

    /// Well-known-text style summary used by table views.
    pub fn wkt_summary(&self) -> String {
        match self {
            Geometry::Point(c) => format!("POINT ({} {})", c[0], c[1]),
            Geometry::LineString(l) => format!("LINESTRING ({} vertices)", l.len()),
            Geometry::MultiLineString(ls) => format!("MULTILINESTRING ({} parts)", ls.len()),
            Geometry::Polygon(r) => format!("POLYGON ({} rings)", r.len()),
            Geometry::MultiPolygon(p) => format!("MULTIPOLYGON ({} parts)", p.len()),
            Geometry::PolygonZ(r) => format!("POLYGON Z ({} rings)", r.len()),
            Geometry::MultiPolygonZ(p) => format!("MULTIPOLYGON Z ({} parts)", p.len()),
        }
    }

    /// GeoJSON geometry object (`type` + `coordinates`).
    pub fn to_json(&self) -> Value {
        let c2 = |c: &Coord| json!([f64_value(c[0]), f64_value(c[1])]);
        let c3 = |c: &Coord3| json!([f64_value(c[0]), f64_value(c[1]), f64_value(c[2])]);
        let coordinates = match self {
            Geometry::Point(c) => c2(c),
            Geometry::LineString(l) => Value::Array(l.iter().map(c2).collect()),
            Geometry::MultiLineString(ls) => {
                Value::Array(ls.iter().map(|l| Value::Array(l.iter().map(c2).collect())).collect())
            }
            Geometry::Polygon(rings) => Value::Array(
                rings.iter().map(|r| Value::Array(r.iter().map(c2).collect())).collect(),
            ),
            Geometry::MultiPolygon(polys) => Value::Array(
                polys
                    .iter()
                    .map(|p| {
                        Value::Array(
                            p.iter().map(|r| Value::Array(r.iter().map(c2).collect())).collect(),
                        )
                    })
                    .collect(),
            ),
            Geometry::PolygonZ(rings) => Value::Array(
                rings.iter().map(|r| Value::Array(r.iter().map(c3).collect())).collect(),
            ),
            Geometry::MultiPolygonZ(polys) => Value::Array(
                polys
                    .iter()
                    .map(|p| {
                        Value::Array(
                            p.iter().map(|r| Value::Array(r.iter().map(c3).collect())).collect(),
                        )
                    })
                    .collect(),
            ),
        };
        json!({"type": self.type_name(), "coordinates": coordinates})
    }

    /// Parse a GeoJSON geometry object. Polygons whose vertices carry three
    /// coordinates become the Z variants.
    pub fn from_json(value: &Value) -> Result<Geometry, String> {
        let obj = value.as_object().ok_or("geometry is not an object")?;
        let kind = obj.get("type").and_then(Value::as_str).ok_or("geometry has no type")?;
        let coords = obj.get("coordinates").ok_or("geometry has no coordinates")?;
        match kind {
            "Point" => Ok(Geometry::Point(coord2(coords)?)),
            "LineString" => Ok(Geometry::LineString(line(coords)?)),
            "MultiLineString" => Ok(Geometry::MultiLineString(
                array(coords)?.iter().map(line).collect::<Result<_, _>>()?,
            )),
            "Polygon" => {
                if is_3d_polygon(coords) {
                    Ok(Geometry::PolygonZ(rings3(coords)?))
                } else {
                    Ok(Geometry::Polygon(rings2(coords)?))
                }
            }
            "MultiPolygon" => {
                let polys = array(coords)?;
                if polys.first().is_some_and(is_3d_polygon) {
                    Ok(Geometry::MultiPolygonZ(polys.iter().map(rings3).collect::<Result<_, _>>()?))
                } else {
                    Ok(Geometry::MultiPolygon(polys.iter().map(rings2).collect::<Result<_, _>>()?))
                }
            }
            other => Err(format!("unsupported geometry type {other}")),
        }
    }
}

fn array(v: &Value) -> Result<&Vec<Value>, String> {
    v.as_array().ok_or_else(|| "expected coordinate array".to_string())
}

fn number(v: &Value) -> Result<f64, String> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| "expected finite number".to_string())
}

fn coord2(v: &Value) -> Result<Coord, String> {
    let a = array(v)?;
    if a.len() != 2 {
        return Err(format!("expected [lon, lat], got {} values", a.len()));
    }
    Ok([number(&a[0])?, number(&a[1])?])
}

fn coord3(v: &Value) -> Result<Coord3, String> {
    let a = array(v)?;
    if a.len() != 3 {
        return Err(format!("expected [lon, lat, z], got {} values", a.len()));
    }
    Ok([number(&a[0])?, number(&a[1])?, number(&a[2])?])
}

fn line(v: &Value) -> Result<Vec<Coord>, String> {
    let pts = array(v)?.iter().map(coord2).collect::<Result<Vec<_>, _>>()?;
    if pts.len() < 2 {
        return Err("line needs at least 2 vertices".into());
    }
    Ok(pts)
}

fn rings2(v: &Value) -> Result<Vec<Vec<Coord>>, String> {
    let rings = array(v)?
        .iter()
        .map(|r| array(r)?.iter().map(coord2).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    check_rings(rings.iter().map(Vec::len))?;
    Ok(rings)
}

fn rings3(v: &Value) -> Result<Vec<Vec<Coord3>>, String> {
    let rings = array(v)?
        .iter()
        .map(|r| array(r)?.iter().map(coord3).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    check_rings(rings.iter().map(Vec::len))?;
    Ok(rings)
}

fn check_rings(lens: impl Iterator<Item = usize>) -> Result<(), String> {
    let mut any = false;
    for n in lens {
        any = true;
        if n < 3 {
            return Err("polygon ring needs at least 3 vertices".into());
        }
    }
    if any {
        Ok(())
    } else {
        Err("polygon has no rings".into())
    }
}

fn is_3d_polygon(coords: &Value) -> bool {
    coords
        .get(0)
        .and_then(|ring| ring.get(0))
        .and_then(Value::as_array)
        .is_some_and(|c| c.len() == 3)
}

fn polygon_contains(rings: &[Vec<Coord>], p: Coord) -> bool {
    if rings.iter().any(|ring| on_ring_boundary(ring, p)) {
        return true;
    }
    // Even-odd rule over all rings handles holes.
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (ring[i], ring[j]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
            j = i;
        }
    }
    inside
}

fn on_ring_boundary(ring: &[Coord], p: Coord) -> bool {
    let n = ring.len();
    (0..n).any(|i| on_segment(ring[i], ring[(i + 1) % n], p))
}

fn on_segment(a: Coord, b: Coord, p: Coord) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    cross == 0.0
        && p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}
