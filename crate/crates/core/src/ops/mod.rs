//! Built-in node operations and the node-template registry.
//!
//! Every operation is a pure function from input layers (and parameters) to
//! output layers. Record ids of outputs are renumbered `0..m`.

mod invoke;
mod spatial;
mod templates;
mod transform;
mod wrangle;

use thiserror::Error;

use crate::layers::{AttributeDef, DataLayer, Dtype, LayerError, LayerKind, Value};

pub use invoke::{run_op, OpDoc, OpInput, Source};
pub use spatial::{spatial_join, JoinHow};
pub use templates::{builtin_templates, NodeTemplate, TemplateError, TemplateRegistry};
pub use transform::{extrude, linear_combination, margin_uncertainty, scale_column, set_where, LinearTerm};
pub use wrangle::{group_by, normalize, remove_duplicates, remove_missing, AggFunc, AggSpec, NormalizeMethod};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("unknown attribute {0}")]
    UnknownAttr(String),
    #[error("column {0} is degenerate for this normalization")]
    DegenerateColumn(String),
    #[error("column {0} is not numeric")]
    NonNumericAgg(String),
    #[error("layer kind mismatch: {0}")]
    KindMismatch(String),
    #[error("bad operation document: {0}")]
    BadDocument(String),
    #[error("expected {expected} input layers, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
}

pub(crate) fn attr_index(layer: &DataLayer, name: &str) -> Result<usize, OpError> {
    layer.attr_index(name).ok_or_else(|| OpError::UnknownAttr(name.to_string()))
}

pub(crate) fn numeric_attr(layer: &DataLayer, name: &str) -> Result<usize, OpError> {
    let i = attr_index(layer, name)?;
    if layer.schema()[i].dtype != Dtype::Number {
        return Err(OpError::NonNumericAgg(name.to_string()));
    }
    Ok(i)
}

/// Keep the records at `keep` (ascending ids). Grids that lose cells no
/// longer tile their extent and become point layers at the cell centers.
pub(crate) fn subset(layer: &DataLayer, keep: &[usize]) -> Result<DataLayer, LayerError> {
    let records: Vec<Vec<Value>> = keep.iter().map(|&i| layer.records()[i].clone()).collect();
    rebuild(layer, records, keep)
}

/// Rebuild `layer` with new records whose i-th element came from source
/// record `origin[i]`, preserving the layer kind where its invariants allow.
pub(crate) fn rebuild(
    layer: &DataLayer,
    records: Vec<Vec<Value>>,
    origin: &[usize],
) -> Result<DataLayer, LayerError> {
    rebuild_with_schema(layer, layer.schema().to_vec(), records, origin)
}

pub(crate) fn rebuild_with_schema(
    layer: &DataLayer,
    schema: Vec<AttributeDef>,
    mut records: Vec<Vec<Value>>,
    origin: &[usize],
) -> Result<DataLayer, LayerError> {
    match layer.grid_meta() {
        Some(meta) if records.len() != meta.nrows * meta.ncols || !origin.iter().enumerate().all(|(i, o)| i == *o) => {
            let mut schema = schema;
            let name = unique_name(&schema, "geometry");
            schema.push(AttributeDef::new(name, Dtype::Geometry2d));
            for (record, &o) in records.iter_mut().zip(origin) {
                record.push(Value::Geometry(crate::geometry::Geometry::Point(meta.cell_center(o))));
            }
            DataLayer::new(LayerKind::Point, schema, records, None)
        }
        meta => DataLayer::new(layer.kind(), schema, records, meta.copied()),
    }
}

pub(crate) fn unique_name(schema: &[AttributeDef], base: &str) -> String {
    let taken = |n: &str| schema.iter().any(|a| a.name == n);
    if !taken(base) {
        return base.to_string();
    }
    (1..).map(|i| format!("{base}_{i}")).find(|n| !taken(n)).expect("unbounded")
}
