//! Canonical layer envelope.
//!
//! ```text
//! {"crs":"EPSG:4326","grid_meta":{...}?,"kind":"point",
//!  "records":[[v0,v1,...],...],"schema":[{"dtype":"number","name":"a"},...]}
//! ```
//!
//! Keys are sorted, records appear in id order and each record is an array
//! aligned with `schema`. Values are encoded by dtype: numbers as JSON
//! numbers, text/timestamp/image_ref as strings, booleans as booleans and
//! geometries as GeoJSON geometry objects. Nulls are `null`.

use serde_json::{json, Map, Value as Json};

use super::{AttributeDef, DataLayer, Dtype, GridMeta, LayerError, LayerKind, Value, CRS};
use crate::canonical::{f64_value, value_to_canonical_vec};
use crate::geometry::Geometry;

pub fn serialize_layer(layer: &DataLayer) -> Vec<u8> {
    value_to_canonical_vec(&to_json(layer))
}

pub(crate) fn to_json(layer: &DataLayer) -> Json {
    let schema: Vec<Json> = layer
        .schema()
        .iter()
        .map(|a| json!({"name": a.name, "dtype": a.dtype.as_str()}))
        .collect();
    let records: Vec<Json> = layer
        .records()
        .iter()
        .map(|r| Json::Array(r.iter().map(value_to_json).collect()))
        .collect();
    let mut obj = Map::new();
    obj.insert("crs".into(), Json::String(CRS.into()));
    obj.insert("kind".into(), Json::String(layer.kind().as_str().into()));
    obj.insert("schema".into(), Json::Array(schema));
    obj.insert("records".into(), Json::Array(records));
    if let Some(meta) = layer.grid_meta() {
        obj.insert(
            "grid_meta".into(),
            json!({
                "xllcorner": f64_value(meta.xllcorner),
                "yllcorner": f64_value(meta.yllcorner),
                "cellsize": f64_value(meta.cellsize),
                "nrows": meta.nrows,
                "ncols": meta.ncols,
            }),
        );
    }
    Json::Object(obj)
}

pub(crate) fn value_to_json(value: &Value) -> Json {
    match value {
        Value::Null => Json::Null,
        Value::Number(x) => f64_value(*x),
        Value::Text(s) | Value::Timestamp(s) | Value::ImageRef(s) => Json::String(s.clone()),
        Value::Bool(b) => Json::Bool(*b),
        Value::Geometry(g) => g.to_json(),
    }
}

pub fn deserialize_layer(bytes: &[u8]) -> Result<DataLayer, LayerError> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    from_json(&doc)
}

pub(crate) fn from_json(doc: &Json) -> Result<DataLayer, LayerError> {
    let obj = doc.as_object().ok_or_else(|| corrupt("envelope is not an object"))?;
    match obj.get("crs").and_then(Json::as_str) {
        Some(CRS) => {}
        Some(other) => return Err(LayerError::UnsupportedCrs(other.to_string())),
        None => return Err(corrupt("missing crs")),
    }
    let kind: LayerKind = obj
        .get("kind")
        .and_then(Json::as_str)
        .ok_or_else(|| corrupt("missing kind"))?
        .parse()
        .map_err(|_| corrupt("unknown kind"))?;
    let schema: Vec<AttributeDef> = serde_json::from_value(
        obj.get("schema").cloned().ok_or_else(|| corrupt("missing schema"))?,
    )
    .map_err(|e| corrupt(format!("schema: {e}")))?;
    let grid_meta: Option<GridMeta> = match obj.get("grid_meta") {
        None => None,
        Some(m) => Some(serde_json::from_value(m.clone()).map_err(|e| corrupt(format!("grid_meta: {e}")))?),
    };
    let raw_records = obj
        .get("records")
        .and_then(Json::as_array)
        .ok_or_else(|| corrupt("missing records"))?;
    let mut records = Vec::with_capacity(raw_records.len());
    for (id, raw) in raw_records.iter().enumerate() {
        let cells = raw.as_array().ok_or_else(|| corrupt(format!("record {id} is not an array")))?;
        if cells.len() != schema.len() {
            return Err(corrupt(format!("record {id} has {} values", cells.len())));
        }
        let record = cells
            .iter()
            .zip(&schema)
            .map(|(cell, attr)| value_from_json(cell, attr.dtype))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| corrupt(format!("record {id}: {e}")))?;
        records.push(record);
    }
    DataLayer::new(kind, schema, records, grid_meta).map_err(|e| match e {
        LayerError::CorruptEnvelope(_) => e,
        other => corrupt(other.to_string()),
    })
}

pub(crate) fn value_from_json(cell: &Json, dtype: Dtype) -> Result<Value, String> {
    if cell.is_null() {
        return Ok(Value::Null);
    }
    let text = || cell.as_str().map(str::to_string).ok_or_else(|| format!("expected string for {}", dtype.as_str()));
    Ok(match dtype {
        Dtype::Number => Value::Number(cell.as_f64().ok_or("expected number")?),
        Dtype::Text => Value::Text(text()?),
        Dtype::Boolean => Value::Bool(cell.as_bool().ok_or("expected boolean")?),
        Dtype::Timestamp => Value::Timestamp(text()?),
        Dtype::ImageRef => Value::ImageRef(text()?),
        Dtype::Geometry2d | Dtype::Geometry3d => Value::Geometry(Geometry::from_json(cell)?),
    })
}

fn corrupt(detail: impl Into<String>) -> LayerError {
    LayerError::CorruptEnvelope(detail.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DataLayer {
        DataLayer::new(
            LayerKind::Point,
            vec![
                AttributeDef::new("name", Dtype::Text),
                AttributeDef::new("v", Dtype::Number),
                AttributeDef::new("geometry", Dtype::Geometry2d),
            ],
            vec![
                vec![Value::Text("a".into()), Value::Number(1.5), Value::Geometry(Geometry::Point([0.0, 1.0]))],
                vec![Value::Null, Value::Number(0.1), Value::Null],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn envelope_text_is_stable() {
        let s = String::from_utf8(serialize_layer(&sample())).unwrap();
        assert_eq!(
            s,
            concat!(
                r#"{"crs":"EPSG:4326","kind":"point","records":[["a",1.5,{"coordinates":[0.0,1.0],"type":"Point"}],"#,
                r#"[null,0.1,null]],"schema":[{"dtype":"text","name":"name"},{"dtype":"number","name":"v"},"#,
                r#"{"dtype":"geometry2d","name":"geometry"}]}"#
            )
        );
    }

    #[test]
    fn round_trip() {
        let l = sample();
        assert_eq!(deserialize_layer(&serialize_layer(&l)).unwrap(), l);
    }

    #[test]
    fn truncated_envelope_is_corrupt() {
        let bytes = serialize_layer(&sample());
        let err = deserialize_layer(&bytes[..bytes.len() / 2]).unwrap_err();
        assert!(matches!(err, LayerError::CorruptEnvelope(_)));
    }

    #[test]
    fn equal_documents_with_different_key_order_serialize_identically() {
        let a = r#"{"kind":"table","crs":"EPSG:4326","schema":[{"name":"a","dtype":"number"}],"records":[[1]]}"#;
        let b = r#"{"records":[[1.0]],"schema":[{"dtype":"number","name":"a"}],"crs":"EPSG:4326","kind":"table"}"#;
        let la = deserialize_layer(a.as_bytes()).unwrap();
        let lb = deserialize_layer(b.as_bytes()).unwrap();
        assert_eq!(serialize_layer(&la), serialize_layer(&lb));
    }

    #[test]
    fn foreign_crs_is_rejected() {
        let doc = r#"{"kind":"table","crs":"EPSG:3857","schema":[],"records":[]}"#;
        assert_eq!(
            deserialize_layer(doc.as_bytes()).unwrap_err(),
            LayerError::UnsupportedCrs("EPSG:3857".into())
        );
    }
}
