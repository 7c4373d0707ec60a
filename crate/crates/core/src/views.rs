//! Renderer-neutral view descriptors for table, chart, map and gallery
//! nodes. Every pickable mark carries the id of the record it draws.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::canonical::to_canonical_vec;
use crate::geometry::{BBox, Geometry};
use crate::interaction::{augment, SelectionState, SELECTION_ATTR};
use crate::layers::{layer_bbox, serialize_layer, DataLayer, Dtype, LayerKind, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViewError {
    #[error("unknown attribute {0}")]
    UnknownAttr(String),
    #[error("attribute {attr} cannot be used as {wanted}")]
    TypeMismatch { attr: String, wanted: String },
    #[error("layer has no geometry")]
    NoGeometry,
    #[error("gallery needs an image layer, got {0}")]
    NotImage(LayerKind),
    #[error("bad view document: {0}")]
    BadDocument(String),
    #[error("{0}")]
    Interaction(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    Table,
    Chart,
    Map,
    Gallery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Bar,
    Point,
    Line,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Quantitative,
    Nominal,
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub field: String,
    /// Inferred from the attribute type when absent.
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub field_type: Option<FieldType>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChannelDoc {
    Name(String),
    Full(Channel),
}

fn channel<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Channel, D::Error> {
    Ok(match ChannelDoc::deserialize(d)? {
        ChannelDoc::Name(field) => Channel { field, field_type: None },
        ChannelDoc::Full(c) => c,
    })
}

fn opt_channel<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Channel>, D::Error> {
    Ok(Option::<ChannelDoc>::deserialize(d)?.map(|c| match c {
        ChannelDoc::Name(field) => Channel { field, field_type: None },
        ChannelDoc::Full(c) => c,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub mark: Mark,
    #[serde(deserialize_with = "channel")]
    pub x: Channel,
    #[serde(deserialize_with = "channel")]
    pub y: Channel,
    #[serde(default, deserialize_with = "opt_channel", skip_serializing_if = "Option::is_none")]
    pub color: Option<Channel>,
    #[serde(default = "yes")]
    pub selection_enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorScale {
    pub min: f64,
    pub max: f64,
    pub ramp: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(default, alias = "color", skip_serializing_if = "Option::is_none")]
    pub color_attr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color_scale: Option<ColorScale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent: Option<BBox>,
    #[serde(default)]
    pub show_3d: bool,
}

/// The code of a visualization node after widget substitution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum ViewDoc {
    Table {
        #[serde(default = "default_limit")]
        limit: usize,
    },
    Chart(ChartSpec),
    Map(MapSpec),
    Gallery {
        #[serde(default)]
        sort_by: Option<String>,
        #[serde(default = "yes")]
        descending: bool,
    },
}

fn default_limit() -> usize {
    100
}

impl ViewDoc {
    pub fn parse(code: &str) -> Result<ViewDoc, ViewError> {
        serde_json::from_str(code).map_err(|e| ViewError::BadDocument(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub id: usize,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartMark {
    pub id: usize,
    pub x: Json,
    pub y: Json,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<Json>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFeature {
    pub id: usize,
    pub geometry: Json,
    /// Position in the color ramp, 0..=1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<f64>,
    pub no_data: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub id: usize,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ViewContent {
    Table { columns: Vec<String>, rows: Vec<TableRow>, total: usize },
    Chart { spec: ChartSpec, marks: Vec<ChartMark> },
    Map { spec: MapSpec, extent: BBox, uniform: bool, has_3d: bool, features: Vec<MapFeature> },
    Gallery { sort_by: Option<String>, items: Vec<GalleryItem> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDescriptor {
    pub view: ViewKind,
    /// Layer envelope, augmented with `interaction` when a selection applies.
    pub data: Json,
    /// Whether picks on this view map to record ids.
    pub record_ids: bool,
    pub content: ViewContent,
}

impl ViewDescriptor {
    pub fn to_bytes(&self) -> Vec<u8> {
        to_canonical_vec(self)
    }
}

/// The layer to show and the per-record selection flags.
fn with_selection(layer: &DataLayer, selection: Option<&SelectionState>) -> Result<(DataLayer, Vec<bool>), ViewError> {
    if let Some(col) = layer.attr_index(SELECTION_ATTR) {
        let flags = layer.column(col).map(|v| *v == Value::Bool(true)).collect();
        return Ok((layer.clone(), flags));
    }
    match selection {
        Some(state) => {
            let out = augment(layer, state).map_err(|e| ViewError::Interaction(e.to_string()))?;
            Ok((out, (0..layer.len()).map(|i| state.selected.contains(&i)).collect()))
        }
        None => Ok((layer.clone(), vec![false; layer.len()])),
    }
}

fn envelope(layer: &DataLayer) -> Json {
    serde_json::from_slice(&serialize_layer(layer)).expect("envelopes are json")
}

pub fn table_view(layer: &DataLayer, limit: usize) -> ViewDescriptor {
    let limit = limit.max(1);
    let mut columns: Vec<String> = layer.schema().iter().map(|a| a.name.clone()).collect();
    let grid = layer.grid_meta().copied();
    if grid.is_some() {
        columns.push("center_lon".into());
        columns.push("center_lat".into());
    }
    let rows = layer
        .records()
        .iter()
        .take(limit)
        .enumerate()
        .map(|(id, r)| {
            let mut cells: Vec<String> = r
                .iter()
                .map(|v| match v {
                    Value::Geometry(g) => g.wkt_summary(),
                    other => other.display(),
                })
                .collect();
            if let Some(meta) = grid {
                let c = meta.cell_center(id);
                cells.push(crate::canonical::format_decimal(c[0]));
                cells.push(crate::canonical::format_decimal(c[1]));
            }
            TableRow { id, cells }
        })
        .collect();
    ViewDescriptor {
        view: ViewKind::Table,
        data: envelope(layer),
        record_ids: false,
        content: ViewContent::Table { columns, rows, total: layer.len() },
    }
}

fn resolve(layer: &DataLayer, ch: &Channel) -> Result<(usize, FieldType), ViewError> {
    let i = layer.attr_index(&ch.field).ok_or_else(|| ViewError::UnknownAttr(ch.field.clone()))?;
    let dtype = layer.schema()[i].dtype;
    let inferred = match dtype {
        Dtype::Number => FieldType::Quantitative,
        Dtype::Timestamp => FieldType::Temporal,
        _ => FieldType::Nominal,
    };
    let ty = ch.field_type.unwrap_or(inferred);
    let ok = match ty {
        FieldType::Quantitative => dtype == Dtype::Number,
        FieldType::Temporal => matches!(dtype, Dtype::Timestamp | Dtype::Text),
        FieldType::Nominal => !dtype.is_geometry(),
    };
    if !ok {
        return Err(ViewError::TypeMismatch { attr: ch.field.clone(), wanted: format!("{ty:?}").to_lowercase() });
    }
    Ok((i, ty))
}

pub fn chart_view(layer: &DataLayer, spec: &ChartSpec, selection: Option<&SelectionState>) -> Result<ViewDescriptor, ViewError> {
    let (x, _) = resolve(layer, &spec.x)?;
    let (y, _) = resolve(layer, &spec.y)?;
    let color = spec.color.as_ref().map(|c| resolve(layer, c)).transpose()?;
    let (data, flags) = with_selection(layer, selection)?;
    let marks = layer
        .records()
        .iter()
        .enumerate()
        .map(|(id, r)| ChartMark {
            id,
            x: r[x].to_json(),
            y: r[y].to_json(),
            color: color.map(|(c, _)| r[c].to_json()),
            selected: flags[id],
        })
        .collect();
    Ok(ViewDescriptor {
        view: ViewKind::Chart,
        data: envelope(&data),
        record_ids: spec.selection_enabled,
        content: ViewContent::Chart { spec: spec.clone(), marks },
    })
}

fn cell_polygon(meta: &crate::layers::GridMeta, id: usize) -> Geometry {
    let c = meta.cell_center(id);
    let h = meta.cellsize / 2.0;
    Geometry::Polygon(vec![vec![
        [c[0] - h, c[1] - h],
        [c[0] + h, c[1] - h],
        [c[0] + h, c[1] + h],
        [c[0] - h, c[1] + h],
        [c[0] - h, c[1] - h],
    ]])
}

pub fn map_view(layer: &DataLayer, spec: &MapSpec, selection: Option<&SelectionState>) -> Result<ViewDescriptor, ViewError> {
    let geom_col = layer.geometry_index();
    let grid = layer.grid_meta().copied();
    if geom_col.is_none() && grid.is_none() {
        return Err(ViewError::NoGeometry);
    }
    let color_col = match &spec.color_attr {
        Some(attr) => {
            let i = layer.attr_index(attr).ok_or_else(|| ViewError::UnknownAttr(attr.clone()))?;
            if layer.schema()[i].dtype != Dtype::Number {
                return Err(ViewError::TypeMismatch { attr: attr.clone(), wanted: "quantitative".into() });
            }
            Some(i)
        }
        None => None,
    };
    let (lo, hi) = match (&spec.color_scale, color_col) {
        (Some(s), _) => (s.min, s.max),
        (None, Some(c)) => {
            let xs: Vec<f64> = layer.column(c).filter_map(Value::as_f64).collect();
            (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
        (None, None) => (0.0, 0.0),
    };
    let extent = match spec.extent {
        Some(b) if b.is_valid() => b,
        Some(_) => return Err(ViewError::BadDocument("invalid extent".into())),
        None => layer_bbox(layer).map_err(|_| ViewError::NoGeometry)?,
    };
    let (data, flags) = with_selection(layer, selection)?;
    let features = layer
        .records()
        .iter()
        .enumerate()
        .map(|(id, r)| {
            let geometry = match (geom_col, grid) {
                (Some(g), _) => r[g].as_geometry().map_or(Json::Null, |g| g.footprint().to_json()),
                (None, Some(meta)) => cell_polygon(&meta, id).to_json(),
                (None, None) => Json::Null,
            };
            let value = color_col.and_then(|c| r[c].as_f64());
            let color = value.map(|v| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 });
            MapFeature { id, geometry, color, no_data: color_col.is_some() && value.is_none(), selected: flags[id] }
        })
        .collect();
    Ok(ViewDescriptor {
        view: ViewKind::Map,
        data: envelope(&data),
        record_ids: true,
        content: ViewContent::Map {
            spec: spec.clone(),
            extent,
            uniform: color_col.is_none(),
            has_3d: layer.kind() == LayerKind::Mesh3d,
            features,
        },
    })
}

/// Images ordered by `sort_by` (descending unless told otherwise, nulls
/// last), else by id.
pub fn gallery_view(
    layer: &DataLayer,
    sort_by: Option<&str>,
    descending: bool,
    selection: Option<&SelectionState>,
) -> Result<ViewDescriptor, ViewError> {
    if layer.kind() != LayerKind::Image {
        return Err(ViewError::NotImage(layer.kind()));
    }
    let path = layer.attr_index("path").ok_or_else(|| ViewError::UnknownAttr("path".into()))?;
    let key = match sort_by {
        Some(attr) => {
            let i = layer.attr_index(attr).ok_or_else(|| ViewError::UnknownAttr(attr.into()))?;
            if layer.schema()[i].dtype != Dtype::Number {
                return Err(ViewError::TypeMismatch { attr: attr.into(), wanted: "quantitative".into() });
            }
            Some(i)
        }
        None => None,
    };
    let (data, flags) = with_selection(layer, selection)?;
    let mut items: Vec<GalleryItem> = layer
        .records()
        .iter()
        .enumerate()
        .map(|(id, r)| GalleryItem {
            id,
            image: r[path].as_str().map(str::to_string).unwrap_or_else(|| r[path].display()),
            value: key.and_then(|k| r[k].as_f64()),
            selected: flags[id],
        })
        .collect();
    if key.is_some() {
        items.sort_by(|a, b| match (a.value, b.value) {
            (Some(x), Some(y)) => {
                let ord = if descending { y.total_cmp(&x) } else { x.total_cmp(&y) };
                ord.then(a.id.cmp(&b.id))
            }
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.id.cmp(&b.id),
        });
    }
    Ok(ViewDescriptor {
        view: ViewKind::Gallery,
        data: envelope(&data),
        record_ids: true,
        content: ViewContent::Gallery { sort_by: sort_by.map(str::to_string), items },
    })
}

/// Descriptor for a node's output. Visualization nodes use their view
/// document; anything else is shown as a table.
pub fn render_view(code: Option<&str>, layer: &DataLayer, selection: Option<&SelectionState>) -> Result<ViewDescriptor, ViewError> {
    let doc = match code {
        Some(c) if crate::engine::is_view_code(c) && !c.trim().is_empty() => ViewDoc::parse(c)?,
        _ => ViewDoc::Table { limit: default_limit() },
    };
    match doc {
        ViewDoc::Table { limit } => Ok(table_view(layer, limit)),
        ViewDoc::Chart(spec) => chart_view(layer, &spec, selection),
        ViewDoc::Map(spec) => map_view(layer, &spec, selection),
        ViewDoc::Gallery { sort_by, descending } => gallery_view(layer, sort_by.as_deref(), descending, selection),
    }
}
