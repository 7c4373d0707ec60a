use serde::{Deserialize, Serialize};

use super::{attr_index, numeric_attr, rebuild, rebuild_with_schema, OpError};
use crate::geometry::Geometry;
use crate::layers::{AttributeDef, DataLayer, Dtype, LayerKind, Value};

/// Set `column` to `value` on records whose `key` attribute equals `equals`.
pub fn set_where(layer: &DataLayer, key: &str, equals: &Value, column: &str, value: &Value) -> Result<DataLayer, OpError> {
    let k = attr_index(layer, key)?;
    let c = attr_index(layer, column)?;
    let target = equals.key();
    let records: Vec<Vec<Value>> = layer
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if target.is_some() && r[k].key() == target {
                r[c] = value.clone();
            }
            r
        })
        .collect();
    let origin: Vec<usize> = (0..records.len()).collect();
    Ok(rebuild(layer, records, &origin)?)
}

/// Multiply a numeric column by `factor`; nulls stay null.
pub fn scale_column(layer: &DataLayer, column: &str, factor: f64) -> Result<DataLayer, OpError> {
    let c = numeric_attr(layer, column)?;
    let records: Vec<Vec<Value>> = layer
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Value::Number(x) = r[c] {
                r[c] = Value::Number(x * factor);
            }
            r
        })
        .collect();
    let origin: Vec<usize> = (0..records.len()).collect();
    Ok(rebuild(layer, records, &origin)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub column: String,
    pub weight: f64,
}

/// Append `output = intercept + sum(weight * column)`. A null in any term
/// yields null.
pub fn linear_combination(layer: &DataLayer, output: &str, terms: &[LinearTerm], intercept: f64) -> Result<DataLayer, OpError> {
    let cols: Vec<(usize, f64)> =
        terms.iter().map(|t| numeric_attr(layer, &t.column).map(|c| (c, t.weight))).collect::<Result<_, _>>()?;
    append_numeric(layer, output, |r| {
        cols.iter().try_fold(intercept, |acc, &(c, w)| r[c].as_f64().map(|x| acc + w * x))
    })
}

/// Append `output = 1 - (p1 - p2)` where p1 and p2 are the two largest of
/// `columns`. High values mark records whose top two classes are close.
pub fn margin_uncertainty(layer: &DataLayer, columns: &[String], output: &str) -> Result<DataLayer, OpError> {
    if columns.len() < 2 {
        return Err(OpError::BadDocument("margin needs at least two probability columns".into()));
    }
    let cols: Vec<usize> = columns.iter().map(|c| numeric_attr(layer, c)).collect::<Result<_, _>>()?;
    append_numeric(layer, output, |r| {
        let mut probs: Vec<f64> = cols.iter().map(|&c| r[c].as_f64()).collect::<Option<_>>()?;
        probs.sort_by(|a, b| b.total_cmp(a));
        Some(1.0 - (probs[0] - probs[1]))
    })
}

fn append_numeric(layer: &DataLayer, output: &str, f: impl Fn(&[Value]) -> Option<f64>) -> Result<DataLayer, OpError> {
    let mut schema = layer.schema().to_vec();
    let replace = schema.iter().position(|a| a.name == output);
    if let Some(i) = replace {
        schema[i].dtype = Dtype::Number;
    } else {
        schema.push(AttributeDef::new(output, Dtype::Number));
    }
    let records: Vec<Vec<Value>> = layer
        .records()
        .iter()
        .map(|r| {
            let v = f(r).map_or(Value::Null, Value::Number);
            let mut r = r.clone();
            match replace {
                Some(i) => r[i] = v,
                None => r.push(v),
            }
            r
        })
        .collect();
    let origin: Vec<usize> = (0..records.len()).collect();
    Ok(rebuild_with_schema(layer, schema, records, &origin)?)
}

/// Lift building footprints to 3D: every vertex of a polygon gets the record's
/// height as z. Records without a height keep no geometry.
pub fn extrude(layer: &DataLayer, height_column: &str) -> Result<DataLayer, OpError> {
    if layer.kind() != LayerKind::Mesh2d {
        return Err(OpError::KindMismatch(format!("extrude needs mesh2d, got {}", layer.kind())));
    }
    let h = numeric_attr(layer, height_column)?;
    let g = layer.geometry_index().expect("mesh2d layers carry geometry");
    let mut schema = layer.schema().to_vec();
    schema[g].dtype = Dtype::Geometry3d;
    let records: Vec<Vec<Value>> = layer
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r[g] = match (r[g].as_geometry(), r[h].as_f64()) {
                (Some(geom), Some(z)) => lift(geom, z).map_or(Value::Null, Value::Geometry),
                _ => Value::Null,
            };
            r
        })
        .collect();
    Ok(DataLayer::new(LayerKind::Mesh3d, schema, records, None)?)
}

fn lift(geom: &Geometry, z: f64) -> Option<Geometry> {
    let ring = |ring: &Vec<[f64; 2]>| ring.iter().map(|c| [c[0], c[1], z]).collect::<Vec<_>>();
    match geom {
        Geometry::Polygon(rings) => Some(Geometry::PolygonZ(rings.iter().map(ring).collect())),
        Geometry::MultiPolygon(polys) => {
            Some(Geometry::MultiPolygonZ(polys.iter().map(|p| p.iter().map(ring).collect()).collect()))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(x: f64) -> Value {
        Value::Number(x)
    }

    fn buildings() -> DataLayer {
        let sq = Geometry::Polygon(vec![vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]]]);
        DataLayer::new(
            LayerKind::Mesh2d,
            vec![
                AttributeDef::new("id", Dtype::Text),
                AttributeDef::new("height", Dtype::Number),
                AttributeDef::new("geometry", Dtype::Geometry2d),
            ],
            vec![
                vec![Value::Text("B1".into()), n(10.0), Value::Geometry(sq.clone())],
                vec![Value::Text("B2".into()), Value::Null, Value::Geometry(sq)],
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn set_where_targets_matching_key() {
        let out = set_where(&buildings(), "id", &Value::Text("B2".into()), "height", &n(42.0)).unwrap();
        assert_eq!(out.records()[0][1], n(10.0));
        assert_eq!(out.records()[1][1], n(42.0));
    }

    #[test]
    fn extrude_lifts_to_mesh3d() {
        let out = extrude(&buildings(), "height").unwrap();
        assert_eq!(out.kind(), LayerKind::Mesh3d);
        assert!(matches!(out.records()[0][2].as_geometry(), Some(Geometry::PolygonZ(r)) if r[0][1][2] == 10.0));
        assert_eq!(out.records()[1][2], Value::Null);
    }

    #[test]
    fn margin_and_linear() {
        let l = DataLayer::table(
            vec![AttributeDef::new("a", Dtype::Number), AttributeDef::new("b", Dtype::Number), AttributeDef::new("c", Dtype::Number)],
            vec![vec![n(0.5), n(0.3), n(0.2)], vec![n(0.9), Value::Null, n(0.1)]],
        )
        .unwrap();
        let cols = ["a".to_string(), "b".to_string(), "c".to_string()];
        let m = margin_uncertainty(&l, &cols, "u").unwrap();
        assert!((m.records()[0][3].as_f64().unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(m.records()[1][3], Value::Null);
        let terms = [LinearTerm { column: "a".into(), weight: 2.0 }, LinearTerm { column: "c".into(), weight: -1.0 }];
        let lc = linear_combination(&l, "s", &terms, 1.0).unwrap();
        assert!((lc.records()[1][3].as_f64().unwrap() - 2.7).abs() < 1e-12);
        let scaled = scale_column(&l, "a", 10.0).unwrap();
        assert_eq!(scaled.records()[0][0], n(5.0));
    }
}
