//! File loaders: CSV tables, GeoJSON feature collections, ASCII grids and
//! image manifests.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value as Json;

use super::{AttributeDef, DataLayer, Dtype, GridMeta, LayerError, LayerKind, Value};
use crate::geometry::Geometry;

/// Optional overrides for [`load_table`].
#[derive(Debug, Clone, Default)]
pub struct TableHints {
    pub dtypes: BTreeMap<String, Dtype>,
    /// Longitude/latitude columns; when both are set the result is a point
    /// layer with a synthesized `geometry` attribute.
    pub lon: Option<String>,
    pub lat: Option<String>,
}

impl TableHints {
    pub fn point(lon: &str, lat: &str) -> Self {
        TableHints { lon: Some(lon.into()), lat: Some(lat.into()), ..Default::default() }
    }
}

struct RawTable {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_csv(bytes: &[u8]) -> Result<RawTable, LayerError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| LayerError::Parse { line: 1, detail: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(LayerError::Parse { line: 1, detail: "missing header row".into() });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LayerError::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(LayerError::RaggedRow { line, expected: header.len(), found: record.len() });
        }
        rows.push((line, record.iter().map(str::to_string).collect()));
    }
    Ok(RawTable { header, rows })
}

fn infer_dtype(cells: impl Iterator<Item = String>) -> Dtype {
    let mut any = false;
    for cell in cells {
        if cell.is_empty() {
            continue;
        }
        any = true;
        if !cell.trim().parse::<f64>().is_ok_and(f64::is_finite) {
            return Dtype::Text;
        }
    }
    if any {
        Dtype::Number
    } else {
        Dtype::Text
    }
}

fn parse_cell(cell: &str, dtype: Dtype, line: usize, column: &str) -> Result<Value, LayerError> {
    if cell.is_empty() {
        return Ok(Value::Null);
    }
    let err = |what: &str| LayerError::Parse {
        line,
        detail: format!("column {column}: cannot read {cell:?} as {what}"),
    };
    Ok(match dtype {
        Dtype::Number => Value::Number(
            cell.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err("number"))?,
        ),
        Dtype::Text => Value::Text(cell.to_string()),
        Dtype::Boolean => match cell.trim().to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Value::Bool(true),
            "false" | "0" | "no" => Value::Bool(false),
            _ => return Err(err("boolean")),
        },
        Dtype::Timestamp => {
            let t = cell.trim();
            let ok = chrono::DateTime::parse_from_rfc3339(t).is_ok()
                || chrono::NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S").is_ok()
                || chrono::NaiveDate::parse_from_str(t, "%Y-%m-%d").is_ok();
            if !ok {
                return Err(err("ISO-8601 timestamp"));
            }
            Value::Timestamp(t.to_string())
        }
        Dtype::ImageRef => Value::ImageRef(cell.to_string()),
        Dtype::Geometry2d | Dtype::Geometry3d => {
            let json: Json = serde_json::from_str(cell).map_err(|_| err("GeoJSON geometry"))?;
            Value::Geometry(Geometry::from_json(&json).map_err(|_| err("GeoJSON geometry"))?)
        }
    })
}

fn column_dtypes(raw: &RawTable, hints: &BTreeMap<String, Dtype>) -> Vec<Dtype> {
    raw.header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            hints
                .get(name)
                .copied()
                .unwrap_or_else(|| infer_dtype(raw.rows.iter().map(|(_, r)| r[i].clone())))
        })
        .collect()
}

fn parse_rows(raw: &RawTable, dtypes: &[Dtype]) -> Result<Vec<Vec<Value>>, LayerError> {
    raw.rows
        .iter()
        .map(|(line, row)| {
            row.iter()
                .zip(dtypes)
                .zip(&raw.header)
                .map(|((cell, dtype), name)| parse_cell(cell, *dtype, *line, name))
                .collect()
        })
        .collect()
}

fn point_geometry(lon: &Value, lat: &Value) -> Value {
    match (lon, lat) {
        (Value::Number(x), Value::Number(y)) => Value::Geometry(Geometry::Point([*x, *y])),
        _ => Value::Null,
    }
}

/// Load a CSV table. Columns whose non-empty cells all parse as numbers
/// become `number`, everything else `text`; empty cells are null.
pub fn load_table(bytes: &[u8], hints: &TableHints) -> Result<DataLayer, LayerError> {
    let raw = read_csv(bytes)?;
    let mut dtype_hints = hints.dtypes.clone();
    let coords = match (&hints.lon, &hints.lat) {
        (Some(lon), Some(lat)) => {
            for c in [lon, lat] {
                if !raw.header.contains(c) {
                    return Err(LayerError::MissingColumn(c.clone()));
                }
                dtype_hints.insert(c.clone(), Dtype::Number);
            }
            Some((lon.clone(), lat.clone()))
        }
        _ => None,
    };
    let dtypes = column_dtypes(&raw, &dtype_hints);
    let mut schema: Vec<AttributeDef> =
        raw.header.iter().zip(&dtypes).map(|(n, d)| AttributeDef::new(n.clone(), *d)).collect();
    let mut records = parse_rows(&raw, &dtypes)?;

    match coords {
        None => DataLayer::new(LayerKind::Table, schema, records, None),
        Some((lon, lat)) => {
            if raw.header.iter().any(|h| h == "geometry") {
                return Err(LayerError::Invalid("column name geometry is reserved for point layers".into()));
            }
            let ilon = raw.header.iter().position(|h| *h == lon).expect("checked");
            let ilat = raw.header.iter().position(|h| *h == lat).expect("checked");
            for record in &mut records {
                let g = point_geometry(&record[ilon], &record[ilat]);
                record.push(g);
            }
            schema.push(AttributeDef::new("geometry", Dtype::Geometry2d));
            DataLayer::new(LayerKind::Point, schema, records, None)
        }
    }
}

/// Expected geometry family for [`load_geo`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoExpect {
    Point,
    Mesh2d,
    Network,
}

impl GeoExpect {
    fn accepts(self, g: &Geometry) -> bool {
        match self {
            GeoExpect::Point => matches!(g, Geometry::Point(_)),
            GeoExpect::Mesh2d => g.is_polygonal(),
            GeoExpect::Network => g.is_lineal(),
        }
    }

    fn layer_kind(self) -> LayerKind {
        match self {
            GeoExpect::Point => LayerKind::Point,
            GeoExpect::Mesh2d => LayerKind::Mesh2d,
            GeoExpect::Network => LayerKind::Network,
        }
    }

    fn label(self) -> &'static str {
        match self {
            GeoExpect::Point => "Point",
            GeoExpect::Mesh2d => "Polygon/MultiPolygon",
            GeoExpect::Network => "LineString/MultiLineString",
        }
    }
}

const ACCEPTED_CRS: [&str; 4] = [
    "EPSG:4326",
    "urn:ogc:def:crs:OGC:1.3:CRS84",
    "urn:ogc:def:crs:EPSG::4326",
    "OGC:CRS84",
];

/// Load a GeoJSON FeatureCollection. Properties become attributes (sorted
/// key union, absent → null) followed by a `geometry` attribute.
pub fn load_geo(bytes: &[u8], expect: GeoExpect) -> Result<DataLayer, LayerError> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| LayerError::Parse {
        line: e.line(),
        detail: e.to_string(),
    })?;
    let parse_err = |detail: String| LayerError::Parse { line: 0, detail };
    if doc.get("type").and_then(Json::as_str) != Some("FeatureCollection") {
        return Err(parse_err("expected a FeatureCollection".into()));
    }
    if let Some(name) = doc.pointer("/crs/properties/name").and_then(Json::as_str) {
        if !ACCEPTED_CRS.contains(&name) {
            return Err(LayerError::UnsupportedCrs(name.to_string()));
        }
    }
    let features = doc
        .get("features")
        .and_then(Json::as_array)
        .ok_or_else(|| parse_err("FeatureCollection without features".into()))?;

    let mut geometries = Vec::with_capacity(features.len());
    let mut props: Vec<&serde_json::Map<String, Json>> = Vec::with_capacity(features.len());
    let empty = serde_json::Map::new();
    for (i, feature) in features.iter().enumerate() {
        let geometry = match feature.get("geometry") {
            None | Some(Json::Null) => Value::Null,
            Some(g) => {
                let g = Geometry::from_json(g).map_err(|e| parse_err(format!("feature {i}: {e}")))?;
                if !expect.accepts(&g) {
                    return Err(LayerError::GeometryKindMismatch {
                        expected: expect.label().into(),
                        found: g.type_name().into(),
                    });
                }
                Value::Geometry(g)
            }
        };
        geometries.push(geometry);
        props.push(feature.get("properties").and_then(Json::as_object).unwrap_or(&empty));
    }

    let keys: BTreeSet<&String> = props.iter().flat_map(|p| p.keys()).collect();
    if keys.iter().any(|k| k.as_str() == "geometry") {
        return Err(parse_err("property name geometry is reserved".into()));
    }
    let mut schema = Vec::with_capacity(keys.len() + 1);
    let mut columns: Vec<Vec<Value>> = Vec::with_capacity(keys.len());
    for key in &keys {
        let cells: Vec<Option<&Json>> =
            props.iter().map(|p| p.get(key.as_str()).filter(|v| !v.is_null())).collect();
        let dtype = if cells.iter().flatten().all(|v| v.is_number()) && cells.iter().any(Option::is_some) {
            Dtype::Number
        } else if cells.iter().flatten().all(|v| v.is_boolean()) && cells.iter().any(Option::is_some) {
            Dtype::Boolean
        } else {
            Dtype::Text
        };
        let values = cells
            .into_iter()
            .map(|c| match (c, dtype) {
                (None, _) => Value::Null,
                (Some(v), Dtype::Number) => Value::Number(v.as_f64().expect("checked numeric")),
                (Some(v), Dtype::Boolean) => Value::Bool(v.as_bool().expect("checked boolean")),
                (Some(Json::String(s)), _) => Value::Text(s.clone()),
                (Some(other), _) => Value::Text(other.to_string()),
            })
            .collect();
        schema.push(AttributeDef::new(key.as_str(), dtype));
        columns.push(values);
    }
    schema.push(AttributeDef::new("geometry", Dtype::Geometry2d));
    let records = geometries
        .into_iter()
        .enumerate()
        .map(|(i, g)| {
            let mut r: Vec<Value> = columns.iter().map(|c| c[i].clone()).collect();
            r.push(g);
            r
        })
        .collect();
    DataLayer::new(expect.layer_kind(), schema, records, None)
}

const GRID_FIELDS: [&str; 6] = ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"];

/// Load an ESRI ASCII grid. One `value` record per cell, row-major from the
/// north-west cell; NODATA cells are null.
pub fn load_grid(bytes: &[u8]) -> Result<DataLayer, LayerError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| LayerError::Parse { line: 0, detail: e.to_string() })?;
    let mut header: BTreeMap<String, f64> = BTreeMap::new();
    let mut values: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(first) = parts.next() else { continue };
        let key = first.to_ascii_lowercase();
        if values.is_empty() && first.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            if !GRID_FIELDS.contains(&key.as_str()) {
                return Err(LayerError::Parse { line: lineno, detail: format!("unknown header field {first}") });
            }
            let v = parts
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| LayerError::Parse { line: lineno, detail: format!("bad value for {first}") })?;
            header.insert(key, v);
        } else {
            values.push((lineno, first));
            values.extend(parts.map(|p| (lineno, p)));
        }
    }
    let field = |name: &str| {
        header.get(name).copied().ok_or_else(|| LayerError::HeaderMissing(name.to_string()))
    };
    let ncols = field("ncols")?;
    let nrows = field("nrows")?;
    let meta = GridMeta {
        xllcorner: field("xllcorner")?,
        yllcorner: field("yllcorner")?,
        cellsize: field("cellsize")?,
        nrows: nrows as usize,
        ncols: ncols as usize,
    };
    let nodata = field("nodata_value")?;
    if nrows < 0.0 || ncols < 0.0 || nrows.fract() != 0.0 || ncols.fract() != 0.0 {
        return Err(LayerError::Parse { line: 0, detail: "nrows/ncols must be non-negative integers".into() });
    }
    let expected = meta.nrows * meta.ncols;
    if values.len() != expected {
        return Err(LayerError::CellCountMismatch { expected, found: values.len() });
    }
    let records = values
        .into_iter()
        .map(|(line, raw)| {
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| LayerError::Parse { line, detail: format!("bad cell value {raw}") })?;
            Ok(vec![if v == nodata { Value::Null } else { Value::Number(v) }])
        })
        .collect::<Result<Vec<_>, LayerError>>()?;
    DataLayer::new(LayerKind::Grid, vec![AttributeDef::new("value", Dtype::Number)], records, Some(meta))
}

/// Load a street-level image manifest (`path,lon,lat[,heading,captured_at]`
/// plus any extra columns). Paths are kept as references.
pub fn load_image_manifest(bytes: &[u8]) -> Result<DataLayer, LayerError> {
    let raw = read_csv(bytes)?;
    for required in ["path", "lon", "lat"] {
        if !raw.header.iter().any(|h| h == required) {
            return Err(LayerError::MissingColumn(required.into()));
        }
    }
    if raw.header.iter().any(|h| h == "geometry") {
        return Err(LayerError::Invalid("column name geometry is reserved for image layers".into()));
    }
    let mut hints = BTreeMap::new();
    hints.insert("path".to_string(), Dtype::ImageRef);
    hints.insert("lon".to_string(), Dtype::Number);
    hints.insert("lat".to_string(), Dtype::Number);
    hints.insert("heading".to_string(), Dtype::Number);
    hints.insert("captured_at".to_string(), Dtype::Timestamp);
    let dtypes = column_dtypes(&raw, &hints);
    let mut schema: Vec<AttributeDef> =
        raw.header.iter().zip(&dtypes).map(|(n, d)| AttributeDef::new(n.clone(), *d)).collect();
    let mut records = parse_rows(&raw, &dtypes)?;
    let ilon = raw.header.iter().position(|h| h == "lon").expect("checked");
    let ilat = raw.header.iter().position(|h| h == "lat").expect("checked");
    for record in &mut records {
        let g = point_geometry(&record[ilon], &record[ilat]);
        record.push(g);
    }
    schema.push(AttributeDef::new("geometry", Dtype::Geometry2d));
    DataLayer::new(LayerKind::Image, schema, records, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::layer_bbox;

    #[test]
    fn numeric_columns_are_inferred() {
        let l = load_table(b"a,b\n1,2\n3,4", &TableHints::default()).unwrap();
        assert_eq!(l.kind(), LayerKind::Table);
        assert_eq!(l.len(), 2);
        assert!(l.schema().iter().all(|a| a.dtype == Dtype::Number));
    }

    #[test]
    fn mixed_column_is_text_and_empty_is_null() {
        let l = load_table(b"a,b\n1,x\n,2", &TableHints::default()).unwrap();
        assert_eq!(l.schema()[0].dtype, Dtype::Number);
        assert_eq!(l.schema()[1].dtype, Dtype::Text);
        assert_eq!(l.records()[1][0], Value::Null);
        assert_eq!(l.records()[1][1], Value::Text("2".into()));
    }

    #[test]
    fn lon_lat_hint_builds_point_layer() {
        let l = load_table(b"lon,lat,t\n0,0,x", &TableHints::point("lon", "lat")).unwrap();
        assert_eq!(l.kind(), LayerKind::Point);
        assert_eq!(l.len(), 1);
        assert_eq!(l.record_location(0), Some([0.0, 0.0]));
    }

    #[test]
    fn header_only_gives_empty_layer() {
        let l = load_table(b"a,b\n", &TableHints::default()).unwrap();
        assert_eq!(l.len(), 0);
        assert_eq!(l.schema().len(), 2);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = load_table(b"a,b\n1,2\n3", &TableHints::default()).unwrap_err();
        assert_eq!(err, LayerError::RaggedRow { line: 3, expected: 2, found: 1 });
    }

    #[test]
    fn hint_overrides_inference() {
        let mut hints = TableHints::default();
        hints.dtypes.insert("zip".into(), Dtype::Text);
        let l = load_table(b"zip\n02139", &hints).unwrap();
        assert_eq!(l.records()[0][0], Value::Text("02139".into()));
        hints.dtypes.insert("zip".into(), Dtype::Boolean);
        assert!(matches!(load_table(b"zip\n02139", &hints), Err(LayerError::Parse { line: 2, .. })));
    }

    #[test]
    fn rfc4180_quoting() {
        let l = load_table(b"name,n\n\"Smith, J\",1\n\"say \"\"hi\"\"\",2", &TableHints::default()).unwrap();
        assert_eq!(l.records()[0][0], Value::Text("Smith, J".into()));
        assert_eq!(l.records()[1][0], Value::Text("say \"hi\"".into()));
    }

    const SQUARE: &str = r#"{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}"#;

    #[test]
    fn polygon_feature_collection() {
        let doc = format!(
            r#"{{"type":"FeatureCollection","features":[{{"type":"Feature","properties":{{"name":"A"}},"geometry":{SQUARE}}}]}}"#
        );
        let l = load_geo(doc.as_bytes(), GeoExpect::Mesh2d).unwrap();
        assert_eq!(l.kind(), LayerKind::Mesh2d);
        assert_eq!(l.len(), 1);
        let names: Vec<_> = l.schema().iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["name", "geometry"]);
    }

    #[test]
    fn point_feature_for_mesh_is_mismatch() {
        let doc = r#"{"type":"FeatureCollection","features":[{"type":"Feature","properties":{},"geometry":{"type":"Point","coordinates":[0,0]}}]}"#;
        assert!(matches!(
            load_geo(doc.as_bytes(), GeoExpect::Mesh2d),
            Err(LayerError::GeometryKindMismatch { .. })
        ));
    }

    #[test]
    fn disjoint_property_keys_union_with_nulls() {
        let doc = format!(
            r#"{{"type":"FeatureCollection","features":[
                {{"type":"Feature","properties":{{"a":1}},"geometry":{SQUARE}}},
                {{"type":"Feature","properties":{{"b":"x"}},"geometry":{SQUARE}}}]}}"#
        );
        let l = load_geo(doc.as_bytes(), GeoExpect::Mesh2d).unwrap();
        let names: Vec<_> = l.schema().iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "geometry"]);
        assert_eq!(l.records()[0][1], Value::Null);
        assert_eq!(l.records()[1][0], Value::Null);
    }

    #[test]
    fn foreign_geojson_crs_is_rejected() {
        let doc = r#"{"type":"FeatureCollection","crs":{"type":"name","properties":{"name":"EPSG:3857"}},"features":[]}"#;
        assert!(matches!(load_geo(doc.as_bytes(), GeoExpect::Point), Err(LayerError::UnsupportedCrs(_))));
    }

    const GRID: &str = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n3 4\n";

    #[test]
    fn ascii_grid_cells() {
        let l = load_grid(GRID.as_bytes()).unwrap();
        assert_eq!(l.len(), 4);
        assert_eq!(l.records()[0][0], Value::Number(1.0));
        assert_eq!(l.record_location(0), Some([0.5, 1.5]));
        let b = layer_bbox(&l).unwrap();
        assert_eq!((b.min_lon, b.min_lat, b.max_lon, b.max_lat), (0.0, 0.0, 2.0, 2.0));
    }

    #[test]
    fn nodata_cells_are_null() {
        let g = GRID.replace("1 2\n3 4", "-9999 -9999\n-9999 -9999");
        let l = load_grid(g.as_bytes()).unwrap();
        assert!(l.records().iter().all(|r| r[0].is_null()));
    }

    #[test]
    fn grid_errors() {
        let short = GRID.replace("3 4", "3");
        assert_eq!(
            load_grid(short.as_bytes()).unwrap_err(),
            LayerError::CellCountMismatch { expected: 4, found: 3 }
        );
        let no_size = GRID.replace("cellsize 1\n", "");
        assert_eq!(load_grid(no_size.as_bytes()).unwrap_err(), LayerError::HeaderMissing("cellsize".into()));
    }

    #[test]
    fn image_manifest() {
        let l = load_image_manifest(b"path,lon,lat\nimg1.jpg,0,0").unwrap();
        assert_eq!(l.kind(), LayerKind::Image);
        assert_eq!(l.records()[0][0], Value::ImageRef("img1.jpg".into()));
        assert_eq!(l.record_location(0), Some([0.0, 0.0]));
        let names: Vec<_> = l.schema().iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["path", "lon", "lat", "geometry"]);

        let dup = load_image_manifest(b"path,lon,lat\na.jpg,0,0\na.jpg,1,1").unwrap();
        assert_eq!(dup.len(), 2);

        assert_eq!(
            load_image_manifest(b"path,lon\na.jpg,0").unwrap_err(),
            LayerError::MissingColumn("lat".into())
        );
    }
}
