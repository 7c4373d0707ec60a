use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{attr_index, numeric_attr, rebuild, subset, OpError};
use crate::layers::{AttributeDef, DataLayer, Dtype, Value, ValueKey};

/// Drop records whose `keys` values repeat an earlier record; the first
/// occurrence wins. Empty `keys` compares whole records.
pub fn remove_duplicates(layer: &DataLayer, keys: &[String]) -> Result<DataLayer, OpError> {
    let cols: Vec<usize> = if keys.is_empty() {
        (0..layer.schema().len()).collect()
    } else {
        keys.iter().map(|k| attr_index(layer, k)).collect::<Result<_, _>>()?
    };
    let mut seen: HashSet<Vec<Option<ValueKey>>> = HashSet::new();
    let keep: Vec<usize> = layer
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| seen.insert(cols.iter().map(|&c| r[c].key()).collect()))
        .map(|(i, _)| i)
        .collect();
    Ok(subset(layer, &keep)?)
}

/// Drop records with a null in any of `columns` (all columns when empty).
pub fn remove_missing(layer: &DataLayer, columns: &[String]) -> Result<DataLayer, OpError> {
    let cols: Vec<usize> = if columns.is_empty() {
        (0..layer.schema().len()).collect()
    } else {
        columns.iter().map(|k| attr_index(layer, k)).collect::<Result<_, _>>()?
    };
    let keep: Vec<usize> = layer
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| cols.iter().all(|&c| !r[c].is_null()))
        .map(|(i, _)| i)
        .collect();
    Ok(subset(layer, &keep)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeMethod {
    /// `(x - mean) / s` with the sample (n-1) standard deviation.
    Zscore,
    /// `(x - min) / (max - min)`.
    Minmax,
}

pub fn normalize(layer: &DataLayer, column: &str, method: NormalizeMethod) -> Result<DataLayer, OpError> {
    let col = attr_index(layer, column)?;
    if layer.schema()[col].dtype != Dtype::Number {
        return Err(OpError::NonNumericAgg(column.to_string()));
    }
    let values: Vec<f64> = layer.column(col).filter_map(Value::as_f64).collect();
    if values.len() < 2 {
        return Err(OpError::DegenerateColumn(column.to_string()));
    }
    let transform: Box<dyn Fn(f64) -> f64> = match method {
        NormalizeMethod::Zscore => {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            if sd == 0.0 || !sd.is_finite() {
                return Err(OpError::DegenerateColumn(column.to_string()));
            }
            Box::new(move |x| (x - mean) / sd)
        }
        NormalizeMethod::Minmax => {
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            if range == 0.0 || !range.is_finite() {
                return Err(OpError::DegenerateColumn(column.to_string()));
            }
            Box::new(move |x| ((x - min) / range).clamp(0.0, 1.0))
        }
    };
    let records: Vec<Vec<Value>> = layer
        .records()
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Value::Number(x) = r[col] {
                r[col] = Value::Number(transform(x));
            }
            r
        })
        .collect();
    let origin: Vec<usize> = (0..records.len()).collect();
    Ok(rebuild(layer, records, &origin)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggFunc {
    Sum,
    Mean,
    Min,
    Max,
    Count,
}

impl AggFunc {
    pub fn as_str(self) -> &'static str {
        match self {
            AggFunc::Sum => "sum",
            AggFunc::Mean => "mean",
            AggFunc::Min => "min",
            AggFunc::Max => "max",
            AggFunc::Count => "count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    pub column: String,
    pub func: AggFunc,
}

impl AggSpec {
    pub fn new(column: impl Into<String>, func: AggFunc) -> Self {
        AggSpec { column: column.into(), func }
    }

    /// Output attribute name, e.g. `sum_population`.
    pub fn output_name(&self) -> String {
        format!("{}_{}", self.func.as_str(), self.column)
    }
}

#[derive(Default)]
struct Acc {
    count: usize,
    sum: f64,
    min: f64,
    max: f64,
}

impl Acc {
    fn push(&mut self, x: f64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        self.sum += x;
    }

    fn finish(&self, func: AggFunc) -> Value {
        if func == AggFunc::Count {
            return Value::Number(self.count as f64);
        }
        if self.count == 0 {
            return Value::Null;
        }
        Value::Number(match func {
            AggFunc::Sum => self.sum,
            AggFunc::Mean => self.sum / self.count as f64,
            AggFunc::Min => self.min,
            AggFunc::Max => self.max,
            AggFunc::Count => unreachable!(),
        })
    }
}

/// One output record per distinct key tuple, in order of first appearance.
/// Null keys group together; aggregates skip nulls and `count` counts
/// non-null values.
pub fn group_by(layer: &DataLayer, keys: &[String], aggs: &[AggSpec]) -> Result<DataLayer, OpError> {
    if keys.is_empty() {
        return Err(OpError::BadDocument("group_by needs at least one key".into()));
    }
    let key_cols: Vec<usize> = keys.iter().map(|k| attr_index(layer, k)).collect::<Result<_, _>>()?;
    if let Some(&g) = key_cols.iter().find(|&&c| layer.schema()[c].dtype.is_geometry()) {
        return Err(OpError::KindMismatch(format!("cannot group by geometry attribute {}", layer.schema()[g].name)));
    }
    let agg_cols: Vec<usize> = aggs
        .iter()
        .map(|a| if a.func == AggFunc::Count { attr_index(layer, &a.column) } else { numeric_attr(layer, &a.column) })
        .collect::<Result<_, _>>()?;

    let mut group_of: HashMap<Vec<Option<ValueKey>>, usize> = HashMap::new();
    let mut groups: Vec<(Vec<Value>, Vec<Acc>)> = Vec::new();
    for record in layer.records() {
        let key: Vec<Option<ValueKey>> = key_cols.iter().map(|&c| record[c].key()).collect();
        let g = *group_of.entry(key).or_insert_with(|| {
            groups.push((
                key_cols.iter().map(|&c| record[c].clone()).collect(),
                aggs.iter().map(|_| Acc::default()).collect(),
            ));
            groups.len() - 1
        });
        for ((acc, &col), spec) in groups[g].1.iter_mut().zip(&agg_cols).zip(aggs) {
            match (&record[col], spec.func) {
                (Value::Null, _) => {}
                (v, AggFunc::Count) => acc.push(v.as_f64().unwrap_or(0.0)),
                (Value::Number(x), _) => acc.push(*x),
                _ => {}
            }
        }
    }

    let mut schema: Vec<AttributeDef> = key_cols.iter().map(|&c| layer.schema()[c].clone()).collect();
    for spec in aggs {
        let name = spec.output_name();
        if schema.iter().any(|a| a.name == name) {
            return Err(OpError::BadDocument(format!("duplicate output column {name}")));
        }
        schema.push(AttributeDef::new(name, Dtype::Number));
    }
    let records = groups
        .into_iter()
        .map(|(mut key, accs)| {
            key.extend(accs.iter().zip(aggs).map(|(a, s)| a.finish(s.func)));
            key
        })
        .collect();
    Ok(DataLayer::table(schema, records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[(&str, Dtype)], rows: Vec<Vec<Value>>) -> DataLayer {
        DataLayer::table(cols.iter().map(|(n, d)| AttributeDef::new(*n, *d)).collect(), rows).unwrap()
    }

    fn t(s: &str) -> Value {
        Value::Text(s.into())
    }

    fn n(x: f64) -> Value {
        Value::Number(x)
    }

    fn two_col(rows: Vec<Vec<Value>>) -> DataLayer {
        table(&[("c0", Dtype::Text), ("c1", Dtype::Number)], rows)
    }

    #[test]
    fn full_record_dedup() {
        let l = two_col(vec![vec![t("A"), n(1.0)], vec![t("A"), n(1.0)], vec![t("B"), n(2.0)]]);
        let out = remove_duplicates(&l, &[]).unwrap();
        assert_eq!(out.records(), &[vec![t("A"), n(1.0)], vec![t("B"), n(2.0)]]);
    }

    #[test]
    fn keyed_dedup_keeps_first() {
        let l = two_col(vec![vec![t("A"), n(1.0)], vec![t("A"), n(2.0)]]);
        let out = remove_duplicates(&l, &["c0".into()]).unwrap();
        assert_eq!(out.records(), &[vec![t("A"), n(1.0)]]);
        assert_eq!(remove_duplicates(&l, &["zz".into()]).unwrap_err(), OpError::UnknownAttr("zz".into()));
    }

    #[test]
    fn missing_values() {
        let l = table(&[("a", Dtype::Number), ("b", Dtype::Number)], vec![vec![n(1.0), Value::Null], vec![n(2.0), n(3.0)]]);
        assert_eq!(remove_missing(&l, &[]).unwrap().records(), &[vec![n(2.0), n(3.0)]]);
        assert_eq!(remove_missing(&l, &["a".into()]).unwrap().len(), 2);
        let clean = remove_missing(&remove_missing(&l, &[]).unwrap(), &[]).unwrap();
        assert_eq!(clean.len(), 1);
    }

    #[test]
    fn zscore_and_minmax() {
        let l = table(&[("x", Dtype::Number)], vec![vec![n(1.0)], vec![n(2.0)], vec![n(3.0)]]);
        let z = normalize(&l, "x", NormalizeMethod::Zscore).unwrap();
        assert_eq!(z.records(), &[vec![n(-1.0)], vec![n(0.0)], vec![n(1.0)]]);
        let l = table(&[("x", Dtype::Number)], vec![vec![n(5.0)], vec![Value::Null], vec![n(10.0)]]);
        let m = normalize(&l, "x", NormalizeMethod::Minmax).unwrap();
        assert_eq!(m.records(), &[vec![n(0.0)], vec![Value::Null], vec![n(1.0)]]);
    }

    #[test]
    fn degenerate_columns() {
        let l = table(&[("x", Dtype::Number)], vec![vec![n(4.0)], vec![n(4.0)], vec![n(4.0)]]);
        assert_eq!(normalize(&l, "x", NormalizeMethod::Zscore).unwrap_err(), OpError::DegenerateColumn("x".into()));
        let one = table(&[("x", Dtype::Number)], vec![vec![n(4.0)]]);
        assert_eq!(normalize(&one, "x", NormalizeMethod::Minmax).unwrap_err(), OpError::DegenerateColumn("x".into()));
    }

    #[test]
    fn group_sum_in_first_appearance_order() {
        let l = two_col(vec![vec![t("A"), n(1.0)], vec![t("A"), n(3.0)], vec![t("B"), n(2.0)]]);
        let g = group_by(&l, &["c0".into()], &[AggSpec::new("c1", AggFunc::Sum)]).unwrap();
        assert_eq!(g.records(), &[vec![t("A"), n(4.0)], vec![t("B"), n(2.0)]]);
        assert_eq!(g.schema()[1].name, "sum_c1");
    }

    #[test]
    fn count_skips_nulls() {
        let l = two_col(vec![vec![t("A"), n(1.0)], vec![t("A"), Value::Null]]);
        let g = group_by(&l, &["c0".into()], &[AggSpec::new("c1", AggFunc::Count)]).unwrap();
        assert_eq!(g.records(), &[vec![t("A"), n(1.0)]]);
    }

    #[test]
    fn null_keys_group_together() {
        let l = two_col(vec![vec![Value::Null, n(1.0)], vec![t("A"), n(2.0)], vec![Value::Null, n(5.0)]]);
        let g = group_by(&l, &["c0".into()], &[AggSpec::new("c1", AggFunc::Max)]).unwrap();
        assert_eq!(g.records(), &[vec![Value::Null, n(5.0)], vec![t("A"), n(2.0)]]);
    }

    #[test]
    fn non_numeric_aggregate_is_rejected() {
        let l = two_col(vec![vec![t("A"), n(1.0)]]);
        let err = group_by(&l, &["c1".into()], &[AggSpec::new("c0", AggFunc::Mean)]).unwrap_err();
        assert_eq!(err, OpError::NonNumericAgg("c0".into()));
    }
}
