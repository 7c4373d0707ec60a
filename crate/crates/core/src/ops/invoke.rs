//! Declarative operation documents: the code language of built-in nodes.
//!
//! A node's code, after widget substitution, is a JSON object tagged by
//! `"op"`. Loader ops read files relative to a data root or take the file
//! contents inline under `data`.

use std::collections::BTreeMap;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use super::*;
use crate::layers::{load_geo, load_grid, load_image_manifest, load_table, GeoExpect, TableHints};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpDoc {
    LoadCsv {
        #[serde(flatten)]
        source: Source,
        #[serde(default)]
        lon: Option<String>,
        #[serde(default)]
        lat: Option<String>,
        #[serde(default)]
        dtypes: BTreeMap<String, Dtype>,
    },
    LoadGeojson {
        #[serde(flatten)]
        source: Source,
        expect: GeoExpect,
    },
    LoadGrid {
        #[serde(flatten)]
        source: Source,
    },
    LoadImageManifest {
        #[serde(flatten)]
        source: Source,
    },
    RemoveDuplicates {
        #[serde(default)]
        keys: Vec<String>,
    },
    RemoveMissing {
        #[serde(default)]
        columns: Vec<String>,
    },
    Normalize {
        column: String,
        method: NormalizeMethod,
    },
    GroupBy {
        keys: Vec<String>,
        aggs: Vec<AggSpec>,
    },
    SpatialJoin {
        #[serde(default = "default_how")]
        how: JoinHow,
    },
    SetWhere {
        key: String,
        equals: serde_json::Value,
        column: String,
        value: serde_json::Value,
    },
    Scale {
        column: String,
        factor: f64,
    },
    Extrude {
        height: String,
    },
    LinearCombination {
        output: String,
        terms: Vec<LinearTerm>,
        #[serde(default)]
        intercept: f64,
    },
    MarginUncertainty {
        columns: Vec<String>,
        output: String,
    },
    /// Forward every input unchanged.
    Identity,
}

fn default_how() -> JoinHow {
    JoinHow::Left
}

/// Where a loader gets its bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Source {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
}

impl Source {
    fn read(&self, data_root: Option<&Path>) -> Result<Vec<u8>, OpError> {
        match (&self.path, &self.data) {
            (None, Some(data)) => Ok(data.clone().into_bytes()),
            (Some(path), None) => {
                let root = data_root.ok_or_else(|| OpError::Io("no data directory configured".into()))?;
                let rel = Path::new(path);
                if !rel.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) {
                    return Err(OpError::Io(format!("path {path} escapes the data directory")));
                }
                std::fs::read(root.join(rel)).map_err(|e| OpError::Io(format!("{path}: {e}")))
            }
            _ => Err(OpError::BadDocument("loader needs exactly one of path or data".into())),
        }
    }
}

/// Inputs to an operation: the layers on the node's input ports in order.
pub struct OpInput<'a> {
    pub layers: &'a [&'a DataLayer],
    pub data_root: Option<&'a Path>,
}

impl OpDoc {
    pub fn parse(code: &str) -> Result<OpDoc, OpError> {
        serde_json::from_str(code).map_err(|e| OpError::BadDocument(e.to_string()))
    }

    /// Number of input layers the op consumes, or None for any.
    pub fn arity(&self) -> Option<usize> {
        match self {
            OpDoc::LoadCsv { .. } | OpDoc::LoadGeojson { .. } | OpDoc::LoadGrid { .. } | OpDoc::LoadImageManifest { .. } => {
                Some(0)
            }
            OpDoc::SpatialJoin { .. } => Some(2),
            OpDoc::Identity => None,
            _ => Some(1),
        }
    }
}

pub fn run_op(doc: &OpDoc, input: OpInput<'_>) -> Result<Vec<DataLayer>, OpError> {
    let layers = input.layers;
    if let Some(expected) = doc.arity() {
        if layers.len() != expected {
            return Err(OpError::Arity { expected, found: layers.len() });
        }
    }
    let one = || layers[0];
    let out = match doc {
        OpDoc::LoadCsv { source, lon, lat, dtypes } => {
            let hints = TableHints { dtypes: dtypes.clone(), lon: lon.clone(), lat: lat.clone() };
            load_table(&source.read(input.data_root)?, &hints)?
        }
        OpDoc::LoadGeojson { source, expect } => load_geo(&source.read(input.data_root)?, *expect)?,
        OpDoc::LoadGrid { source } => load_grid(&source.read(input.data_root)?)?,
        OpDoc::LoadImageManifest { source } => load_image_manifest(&source.read(input.data_root)?)?,
        OpDoc::RemoveDuplicates { keys } => remove_duplicates(one(), keys)?,
        OpDoc::RemoveMissing { columns } => remove_missing(one(), columns)?,
        OpDoc::Normalize { column, method } => normalize(one(), column, *method)?,
        OpDoc::GroupBy { keys, aggs } => group_by(one(), keys, aggs)?,
        OpDoc::SpatialJoin { how } => spatial_join(layers[0], layers[1], *how)?,
        OpDoc::SetWhere { key, equals, column, value } => {
            let layer = one();
            let key_dtype = layer.attr(key).ok_or_else(|| OpError::UnknownAttr(key.clone()))?.dtype;
            let col_dtype = layer.attr(column).ok_or_else(|| OpError::UnknownAttr(column.clone()))?.dtype;
            let equals = Value::from_json(equals, key_dtype).map_err(OpError::BadDocument)?;
            let value = Value::from_json(value, col_dtype).map_err(OpError::BadDocument)?;
            set_where(layer, key, &equals, column, &value)?
        }
        OpDoc::Scale { column, factor } => scale_column(one(), column, *factor)?,
        OpDoc::Extrude { height } => extrude(one(), height)?,
        OpDoc::LinearCombination { output, terms, intercept } => linear_combination(one(), output, terms, *intercept)?,
        OpDoc::MarginUncertainty { columns, output } => margin_uncertainty(one(), columns, output)?,
        OpDoc::Identity => return Ok(layers.iter().map(|l| (*l).clone()).collect()),
    };
    Ok(vec![out])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_runs_inline_loader() {
        let doc = OpDoc::parse(r#"{"op":"load_csv","data":"a,b\n1,x\n1,x\n"}"#).unwrap();
        let out = run_op(&doc, OpInput { layers: &[], data_root: None }).unwrap();
        assert_eq!(out[0].len(), 2);
        let dedup = OpDoc::parse(r#"{"op":"remove_duplicates"}"#).unwrap();
        let out = run_op(&dedup, OpInput { layers: &[&out[0]], data_root: None }).unwrap();
        assert_eq!(out[0].len(), 1);
    }

    #[test]
    fn rejects_unknown_ops_and_escaping_paths() {
        assert!(matches!(OpDoc::parse(r#"{"op":"explode"}"#), Err(OpError::BadDocument(_))));
        let doc = OpDoc::parse(r#"{"op":"load_grid","path":"../secret.asc"}"#).unwrap();
        let dir = std::env::temp_dir();
        assert!(matches!(run_op(&doc, OpInput { layers: &[], data_root: Some(&dir) }), Err(OpError::Io(_))));
    }

    #[test]
    fn arity_is_checked() {
        let doc = OpDoc::parse(r#"{"op":"spatial_join"}"#).unwrap();
        assert_eq!(
            run_op(&doc, OpInput { layers: &[], data_root: None }).unwrap_err(),
            OpError::Arity { expected: 2, found: 0 }
        );
    }

    #[test]
    fn set_where_reads_typed_values() {
        let table = load_table(b"id,h\nB1,3\nB2,4\n", &TableHints::default()).unwrap();
        let doc = OpDoc::parse(r#"{"op":"set_where","key":"id","equals":"B2","column":"h","value":40}"#).unwrap();
        let out = run_op(&doc, OpInput { layers: &[&table], data_root: None }).unwrap();
        assert_eq!(out[0].records()[1][1], Value::Number(40.0));
    }
}
