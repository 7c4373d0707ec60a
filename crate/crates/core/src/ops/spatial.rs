use serde::{Deserialize, Serialize};

use super::{rebuild_with_schema, OpError};
use crate::geometry::BBox;
use crate::layers::{AttributeDef, DataLayer, Dtype, LayerKind, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinHow {
    /// Keep every left record; unmatched ones get nulls.
    Left,
    /// Keep only left records inside some polygon.
    Inner,
}

/// Attach the attributes of the containing polygon to each left record.
///
/// Left records are located by their point geometry (grid cells by their
/// centers). A point on a polygon boundary is inside; when several polygons
/// contain a point the one with the lowest record id wins. Right attribute
/// names that collide with left ones get a `_right` suffix.
pub fn spatial_join(left: &DataLayer, right: &DataLayer, how: JoinHow) -> Result<DataLayer, OpError> {
    if !matches!(left.kind(), LayerKind::Point | LayerKind::Grid | LayerKind::Image) {
        return Err(OpError::KindMismatch(format!("left side must be point, grid or image, got {}", left.kind())));
    }
    if right.kind() != LayerKind::Mesh2d {
        return Err(OpError::KindMismatch(format!("right side must be mesh2d, got {}", right.kind())));
    }
    let geom_col = right.geometry_index().expect("mesh2d layers carry geometry");
    let carried: Vec<usize> = (0..right.schema().len()).filter(|&i| i != geom_col).collect();

    let mut schema = left.schema().to_vec();
    for &i in &carried {
        let attr = &right.schema()[i];
        let mut name = attr.name.clone();
        if schema.iter().any(|a| a.name == name) {
            name = super::unique_name(&schema, &format!("{name}_right"));
        }
        schema.push(AttributeDef::new(name, attr.dtype));
    }
    debug_assert!(schema.iter().filter(|a| a.dtype == Dtype::Geometry2d).count() <= 1);

    let polygons: Vec<(usize, BBox)> = right
        .records()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r[geom_col].as_geometry().and_then(|g| g.bbox()).map(|b| (i, b)))
        .collect();

    let mut records = Vec::with_capacity(left.len());
    let mut origin = Vec::with_capacity(left.len());
    for (id, record) in left.records().iter().enumerate() {
        let hit = left.record_location(id).and_then(|p| {
            polygons.iter().find_map(|&(j, bbox)| {
                let g = right.records()[j][geom_col].as_geometry()?;
                (bbox.contains(p) && g.contains_point(p)).then_some(j)
            })
        });
        if hit.is_none() && how == JoinHow::Inner {
            continue;
        }
        let mut out = record.clone();
        match hit {
            Some(j) => out.extend(carried.iter().map(|&i| right.records()[j][i].clone())),
            None => out.extend(carried.iter().map(|_| Value::Null)),
        }
        records.push(out);
        origin.push(id);
    }
    Ok(rebuild_with_schema(left, schema, records, &origin)?)
}
