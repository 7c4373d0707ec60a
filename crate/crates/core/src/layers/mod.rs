//! Urban data layers: the typed record collections that flow along edges.

mod envelope;
mod load;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::ContentHash;
use crate::geometry::{BBox, Coord, Geometry};

pub use envelope::{deserialize_layer, serialize_layer};
pub use load::{load_geo, load_grid, load_image_manifest, load_table, GeoExpect, TableHints};

/// The only coordinate reference system layers may carry.
pub const CRS: &str = "EPSG:4326";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayerError {
    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: usize, expected: usize, found: usize },
    #[error("geometry kind mismatch: expected {expected}, found {found}")]
    GeometryKindMismatch { expected: String, found: String },
    #[error("grid header missing field {0}")]
    HeaderMissing(String),
    #[error("grid declares {expected} cells but {found} values were given")]
    CellCountMismatch { expected: usize, found: usize },
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("layer has no geometry")]
    NoGeometry,
    #[error("corrupt envelope: {0}")]
    CorruptEnvelope(String),
    #[error("unsupported coordinate reference system {0}")]
    UnsupportedCrs(String),
    #[error("invalid layer: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Point,
    Grid,
    Mesh2d,
    Mesh3d,
    Network,
    Image,
    Table,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Point,
        LayerKind::Grid,
        LayerKind::Mesh2d,
        LayerKind::Mesh3d,
        LayerKind::Network,
        LayerKind::Image,
        LayerKind::Table,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Point => "point",
            LayerKind::Grid => "grid",
            LayerKind::Mesh2d => "mesh2d",
            LayerKind::Mesh3d => "mesh3d",
            LayerKind::Network => "network",
            LayerKind::Image => "image",
            LayerKind::Table => "table",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = LayerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LayerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| LayerError::Invalid(format!("unknown layer kind {s}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Number,
    Text,
    Boolean,
    Timestamp,
    Geometry2d,
    Geometry3d,
    ImageRef,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Number => "number",
            Dtype::Text => "text",
            Dtype::Boolean => "boolean",
            Dtype::Timestamp => "timestamp",
            Dtype::Geometry2d => "geometry2d",
            Dtype::Geometry3d => "geometry3d",
            Dtype::ImageRef => "image_ref",
        }
    }

    pub fn is_geometry(self) -> bool {
        matches!(self, Dtype::Geometry2d | Dtype::Geometry3d)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeDef {
    pub name: String,
    pub dtype: Dtype,
}

impl AttributeDef {
    pub fn new(name: impl Into<String>, dtype: Dtype) -> Self {
        AttributeDef { name: name.into(), dtype }
    }
}

/// One attribute value. Nulls are ordinary values.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Number(f64),
    Text(String),
    Bool(bool),
    /// ISO-8601 timestamp text.
    Timestamp(String),
    Geometry(Geometry),
    ImageRef(String),
}

impl Value {
    /// Decode a JSON cell as it appears in a layer envelope.
    pub fn from_json(cell: &serde_json::Value, dtype: Dtype) -> Result<Value, String> {
        envelope::value_from_json(cell, dtype)
    }

    pub fn to_json(&self) -> serde_json::Value {
        envelope::value_to_json(self)
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Text(s) | Value::Timestamp(s) | Value::ImageRef(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_geometry(&self) -> Option<&Geometry> {
        match self {
            Value::Geometry(g) => Some(g),
            _ => None,
        }
    }

    fn matches(&self, dtype: Dtype) -> bool {
        match (self, dtype) {
            (Value::Null, _) => true,
            (Value::Number(x), Dtype::Number) => x.is_finite(),
            (Value::Text(_), Dtype::Text) => true,
            (Value::Bool(_), Dtype::Boolean) => true,
            (Value::Timestamp(_), Dtype::Timestamp) => true,
            (Value::Geometry(g), Dtype::Geometry2d) => !g.is_3d(),
            (Value::Geometry(g), Dtype::Geometry3d) => g.is_3d(),
            (Value::ImageRef(_), Dtype::ImageRef) => true,
            _ => false,
        }
    }

    /// Hashable identity used for equality-based grouping and key matching.
    /// Nulls map to `None`.
    pub fn key(&self) -> Option<ValueKey> {
        match self {
            Value::Null => None,
            Value::Number(x) => Some(ValueKey::Number(normalize_zero(*x).to_bits())),
            Value::Text(s) => Some(ValueKey::Text(s.clone())),
            Value::Bool(b) => Some(ValueKey::Bool(*b)),
            Value::Timestamp(s) => Some(ValueKey::Text(s.clone())),
            Value::ImageRef(s) => Some(ValueKey::Text(s.clone())),
            Value::Geometry(g) => Some(ValueKey::Text(g.to_json().to_string())),
        }
    }

    /// Short human-readable rendering for logs and table views.
    pub fn display(&self) -> String {
        match self {
            Value::Null => "null".into(),
            Value::Number(x) => crate::canonical::format_decimal(*x),
            Value::Text(s) | Value::Timestamp(s) | Value::ImageRef(s) => s.clone(),
            Value::Bool(b) => b.to_string(),
            Value::Geometry(g) => g.wkt_summary(),
        }
    }
}

fn normalize_zero(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValueKey {
    Number(u64),
    Text(String),
    Bool(bool),
}

/// Raster georeferencing: lower-left corner, square cells, row-major from the
/// north-west cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub xllcorner: f64,
    pub yllcorner: f64,
    pub cellsize: f64,
    pub nrows: usize,
    pub ncols: usize,
}

impl GridMeta {
    /// Center of the cell stored at `record` (row-major, row 0 = north).
    pub fn cell_center(&self, record: usize) -> Coord {
        let row = record / self.ncols;
        let col = record % self.ncols;
        [
            self.xllcorner + (col as f64 + 0.5) * self.cellsize,
            self.yllcorner + ((self.nrows - row) as f64 - 0.5) * self.cellsize,
        ]
    }

    pub fn extent(&self) -> BBox {
        BBox {
            min_lon: self.xllcorner,
            min_lat: self.yllcorner,
            max_lon: self.xllcorner + self.ncols as f64 * self.cellsize,
            max_lat: self.yllcorner + self.nrows as f64 * self.cellsize,
        }
    }
}

/// A typed, immutable record collection. Record ids are 0-based ordinals.
#[derive(Debug, Clone, PartialEq)]
pub struct DataLayer {
    kind: LayerKind,
    schema: Vec<AttributeDef>,
    records: Vec<Vec<Value>>,
    grid_meta: Option<GridMeta>,
}

impl DataLayer {
    /// Build a layer, checking the schema and the kind invariants.
    pub fn new(
        kind: LayerKind,
        schema: Vec<AttributeDef>,
        records: Vec<Vec<Value>>,
        grid_meta: Option<GridMeta>,
    ) -> Result<Self, LayerError> {
        let records = records
            .into_iter()
            .map(|r| {
                r.into_iter()
                    .map(|v| match v {
                        Value::Number(x) => Value::Number(normalize_zero(x)),
                        other => other,
                    })
                    .collect()
            })
            .collect();
        let layer = DataLayer { kind, schema, records, grid_meta };
        layer.check()?;
        Ok(layer)
    }

    pub fn table(schema: Vec<AttributeDef>, records: Vec<Vec<Value>>) -> Result<Self, LayerError> {
        DataLayer::new(LayerKind::Table, schema, records, None)
    }

    fn check(&self) -> Result<(), LayerError> {
        let mut seen = HashSet::new();
        for attr in &self.schema {
            if attr.name.is_empty() {
                return Err(LayerError::Invalid("empty attribute name".into()));
            }
            if !seen.insert(attr.name.as_str()) {
                return Err(LayerError::Invalid(format!("duplicate attribute {}", attr.name)));
            }
        }
        for (id, record) in self.records.iter().enumerate() {
            if record.len() != self.schema.len() {
                return Err(LayerError::Invalid(format!(
                    "record {id} has {} values for {} attributes",
                    record.len(),
                    self.schema.len()
                )));
            }
            for (value, attr) in record.iter().zip(&self.schema) {
                if !value.matches(attr.dtype) {
                    return Err(LayerError::Invalid(format!(
                        "record {id}: value {value:?} does not match {} attribute {}",
                        attr.dtype.as_str(),
                        attr.name
                    )));
                }
            }
        }
        if self.kind != LayerKind::Grid && self.grid_meta.is_some() {
            return Err(LayerError::Invalid("grid_meta on a non-grid layer".into()));
        }
        match self.kind {
            LayerKind::Point => self.check_geometry(Dtype::Geometry2d, "Point", |g| {
                matches!(g, Geometry::Point(_))
            }),
            LayerKind::Mesh2d => {
                self.check_geometry(Dtype::Geometry2d, "Polygon", Geometry::is_polygonal)
            }
            LayerKind::Mesh3d => self.check_geometry(Dtype::Geometry3d, "3D polygon", |_| true),
            LayerKind::Network => {
                self.check_geometry(Dtype::Geometry2d, "LineString", Geometry::is_lineal)
            }
            LayerKind::Image => {
                if self.count_dtype(Dtype::ImageRef) != 1 {
                    return Err(LayerError::Invalid(
                        "image layer needs exactly one image_ref attribute".into(),
                    ));
                }
                self.check_geometry(Dtype::Geometry2d, "Point", |g| matches!(g, Geometry::Point(_)))
            }
            LayerKind::Grid => {
                let meta = self
                    .grid_meta
                    .ok_or_else(|| LayerError::Invalid("grid layer without grid_meta".into()))?;
                if meta.nrows * meta.ncols != self.records.len() {
                    return Err(LayerError::Invalid(format!(
                        "grid is {}x{} but has {} records",
                        meta.nrows,
                        meta.ncols,
                        self.records.len()
                    )));
                }
                if !(meta.cellsize > 0.0 && meta.cellsize.is_finite()) {
                    return Err(LayerError::Invalid("grid cellsize must be positive".into()));
                }
                Ok(())
            }
            LayerKind::Table => Ok(()),
        }
    }

    fn count_dtype(&self, dtype: Dtype) -> usize {
        self.schema.iter().filter(|a| a.dtype == dtype).count()
    }

    fn check_geometry(
        &self,
        dtype: Dtype,
        expected: &str,
        ok: impl Fn(&Geometry) -> bool,
    ) -> Result<(), LayerError> {
        if self.count_dtype(dtype) != 1 {
            return Err(LayerError::Invalid(format!(
                "{} layer needs exactly one {} attribute",
                self.kind,
                dtype.as_str()
            )));
        }
        let col = self.schema.iter().position(|a| a.dtype == dtype).expect("counted above");
        for record in &self.records {
            if let Value::Geometry(g) = &record[col] {
                if !ok(g) {
                    return Err(LayerError::GeometryKindMismatch {
                        expected: expected.to_string(),
                        found: g.type_name().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn schema(&self) -> &[AttributeDef] {
        &self.schema
    }

    pub fn records(&self) -> &[Vec<Value>] {
        &self.records
    }

    pub fn grid_meta(&self) -> Option<&GridMeta> {
        self.grid_meta.as_ref()
    }

    pub fn crs(&self) -> &'static str {
        CRS
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn attr_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|a| a.name == name)
    }

    pub fn attr(&self, name: &str) -> Option<&AttributeDef> {
        self.schema.iter().find(|a| a.name == name)
    }

    /// Column index of the layer's primary geometry attribute, if any.
    pub fn geometry_index(&self) -> Option<usize> {
        self.schema.iter().position(|a| a.dtype == Dtype::Geometry2d).or_else(|| {
            self.schema.iter().position(|a| a.dtype == Dtype::Geometry3d)
        })
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &Value> + '_ {
        self.records.iter().map(move |r| &r[index])
    }

    /// Planar location of a record: its point geometry or, for grids, its
    /// cell center.
    pub fn record_location(&self, record: usize) -> Option<Coord> {
        if let Some(meta) = &self.grid_meta {
            return Some(meta.cell_center(record));
        }
        match self.geometry_index().map(|i| &self.records[record][i]) {
            Some(Value::Geometry(Geometry::Point(c))) => Some(*c),
            _ => None,
        }
    }

    pub fn content_hash(&self) -> ContentHash {
        ContentHash::of(&serialize_layer(self))
    }

    /// Decompose into parts (for building derived layers).
    pub fn into_parts(self) -> (LayerKind, Vec<AttributeDef>, Vec<Vec<Value>>, Option<GridMeta>) {
        (self.kind, self.schema, self.records, self.grid_meta)
    }
}

/// Tight envelope over every geometry value, or the grid extent.
pub fn layer_bbox(layer: &DataLayer) -> Result<BBox, LayerError> {
    if let Some(meta) = layer.grid_meta() {
        return Ok(meta.extent());
    }
    let mut bbox: Option<BBox> = None;
    for record in layer.records() {
        for value in record {
            if let Some(b) = value.as_geometry().and_then(Geometry::bbox) {
                match &mut bbox {
                    Some(acc) => acc.union(&b),
                    None => bbox = Some(b),
                }
            }
        }
    }
    bbox.ok_or(LayerError::NoGeometry)
}
