//! Ready-made dataflows over [`crate::synth`] data.
//!
//! Each builder returns a validated spec with the data inlined in loader
//! code, so the flows run without touching the filesystem.

use serde_json::json;

use crate::model::{
    apply_mutation, DataDependency, DataflowSpec, Edge, InteractionDependency, LinkKeys, ModelError, Mutation, NodeSpec,
};
use crate::ops::TemplateRegistry;
use crate::synth;

/// Incremental spec construction from builtin templates.
pub struct FlowBuilder {
    spec: DataflowSpec,
    templates: TemplateRegistry,
}

impl FlowBuilder {
    pub fn new(id: &str, name: &str) -> Self {
        FlowBuilder { spec: DataflowSpec::empty(id, name), templates: TemplateRegistry::with_builtins() }
    }

    fn apply(&mut self, m: Mutation) -> Result<&mut Self, ModelError> {
        self.spec = apply_mutation(&self.spec, &m)?;
        Ok(self)
    }

    /// Instantiate `template` as `id`, replacing its code when `code` is given.
    pub fn node(&mut self, id: &str, template: &str, code: Option<String>) -> Result<&mut Self, ModelError> {
        let t = self.templates.get(template).ok_or_else(|| ModelError::UnknownId(template.into()))?;
        let mut node = t.instantiate(id);
        if let Some(code) = code {
            node.canonical_code = code;
        }
        self.apply(Mutation::AddNode { node, rect: None })
    }

    pub fn interaction(&mut self, id: &str, ports: usize) -> Result<&mut Self, ModelError> {
        self.apply(Mutation::AddNode { node: NodeSpec::interaction(id, ports), rect: None })
    }

    pub fn edge(&mut self, source: &str, target: &str) -> Result<&mut Self, ModelError> {
        self.apply(Mutation::AddEdge { edge: Edge::Data(DataDependency::new(source, target)) })
    }

    pub fn edge_to(&mut self, source: &str, target: &str, input: usize) -> Result<&mut Self, ModelError> {
        self.apply(Mutation::AddEdge { edge: Edge::Data(DataDependency::with_slot(source, target, 0, input)) })
    }

    pub fn link(&mut self, a: &str, b: &str, a_key: &str, b_key: &str) -> Result<&mut Self, ModelError> {
        let dep = InteractionDependency {
            endpoint_a: a.into(),
            endpoint_b: b.into(),
            link: Some(LinkKeys { local_key_attr: a_key.into(), remote_key_attr: b_key.into() }),
        };
        self.apply(Mutation::AddEdge { edge: Edge::Interaction(dep) })
    }

    pub fn finish(&mut self) -> DataflowSpec {
        self.spec.clone()
    }
}

fn op(doc: serde_json::Value) -> Option<String> {
    Some(doc.to_string())
}

fn hoods_loader(seed: u64) -> Option<String> {
    op(json!({"op": "load_geojson", "data": synth::neighborhoods_geojson(seed), "expect": "mesh2d"}))
}

/// Complaints, neighborhoods and boroughs on three linked selections:
/// `pick_borough` relates to `pick_hood` by borough, and `pick_hood` to
/// `pick_complaint` by neighborhood.
pub fn linked_boroughs(complaints: usize, seed: u64) -> Result<DataflowSpec, ModelError> {
    let mut b = FlowBuilder::new("linked-boroughs", "Complaints by borough");
    let points = json!({"op": "load_csv", "data": synth::complaints_csv(complaints, seed), "lon": "lon", "lat": "lat"});
    b.node("complaints", "load.csv_points", op(points))?
        .node("hoods", "load.geojson", hoods_loader(seed))?
        .node("boroughs", "load.csv", op(json!({"op": "load_csv", "data": synth::boroughs_csv()})))?
        .node("located", "transform.spatial_join", op(json!({"op": "spatial_join", "how": "inner"})))?
        .edge_to("complaints", "located", 0)?
        .edge_to("hoods", "located", 1)?
        .interaction("pick_complaint", 1)?
        .interaction("pick_hood", 2)?
        .interaction("pick_borough", 2)?
        .edge("located", "pick_complaint")?
        .edge("hoods", "pick_hood")?
        .edge_to("pick_complaint", "pick_hood", 1)?
        .edge("boroughs", "pick_borough")?
        .edge_to("pick_hood", "pick_borough", 1)?
        .link("pick_borough", "pick_hood", "borough", "borough")?
        .link("pick_hood", "pick_complaint", "hood", "hood")?
        .node("complaint_map", "view.map", op(json!({"view": "map"})))?
        .edge("pick_complaint", "complaint_map")?;
    Ok(b.finish())
}

/// Street-level images scored by classifier uncertainty, shown as a sorted
/// gallery, a point map and a per-neighborhood bar chart.
pub fn image_uncertainty(images: usize, seed: u64) -> Result<DataflowSpec, ModelError> {
    let mut b = FlowBuilder::new("image-uncertainty", "Image uncertainty");
    let classes: Vec<&str> = synth::IMAGE_CLASSES.to_vec();
    b.node("images", "load.images", op(json!({"op": "load_image_manifest", "data": synth::images_csv(images, seed)})))?
        .node(
            "uncertainty",
            "analysis.margin_uncertainty",
            op(json!({"op": "margin_uncertainty", "columns": classes, "output": "uncertainty"})),
        )?
        .edge("images", "uncertainty")?
        .node("gallery", "view.gallery", None)?
        .edge("uncertainty", "gallery")?
        .node("image_map", "view.map", op(json!({"view": "map", "color": "uncertainty"})))?
        .edge("uncertainty", "image_map")?
        .node("hoods", "load.geojson", hoods_loader(seed))?
        .node("located", "transform.spatial_join", op(json!({"op": "spatial_join", "how": "inner"})))?
        .edge_to("uncertainty", "located", 0)?
        .edge_to("hoods", "located", 1)?
        .node(
            "by_hood",
            "transform.group_by",
            op(json!({"op": "group_by", "keys": ["hood"], "aggs": [{"column": "uncertainty", "func": "mean"}]})),
        )?
        .edge("located", "by_hood")?
        .node("hood_chart", "view.chart", op(json!({"view": "chart", "mark": "bar", "x": "hood", "y": "mean_uncertainty"})))?
        .edge("by_hood", "hood_chart")?;
    Ok(b.finish())
}

/// Building id whose height the slider controls in [`what_if_height`].
pub const WHAT_IF_BUILDING: &str = "b007";

/// Footprints extruded to 3D, with one building's height driven by a slider.
/// A sibling table over the raw footprints does not depend on the slider.
pub fn what_if_height(buildings: usize, seed: u64) -> Result<DataflowSpec, ModelError> {
    let mut b = FlowBuilder::new("what-if-height", "What-if building height");
    let set = format!(
        r#"{{"op":"set_where","key":"bid","equals":"{WHAT_IF_BUILDING}","column":"height","value":$[slider,Height,0,200,1,20]}}"#
    );
    b.node(
        "buildings",
        "load.geojson",
        op(json!({"op": "load_geojson", "data": synth::buildings_geojson(buildings, seed), "expect": "mesh2d"})),
    )?
    .node("what_if", "transform.set_where", Some(set))?
    .edge("buildings", "what_if")?
    .node("extrude", "transform.extrude", None)?
    .edge("what_if", "extrude")?
    .node("city_3d", "view.map", op(json!({"view": "map", "color": "height", "show_3d": true})))?
    .edge("extrude", "city_3d")?
    .node("footprints", "view.table", op(json!({"view": "table", "limit": 50})))?
    .edge("buildings", "footprints")?;
    Ok(b.finish())
}

/// Weights of the thermal-comfort proxy computed from mean radiant
/// temperature in [`heat_exposure`]: `utci = MRT_WEIGHT * mrt + MRT_OFFSET`.
pub const MRT_WEIGHT: f64 = 0.6;
pub const MRT_OFFSET: f64 = 12.0;

/// Radiant temperature raster turned into a comfort index, averaged per
/// neighborhood and plotted against the population over 65. Picking points
/// on the scatter highlights the neighborhoods on the map.
pub fn heat_exposure(seed: u64) -> Result<DataflowSpec, ModelError> {
    let mut b = FlowBuilder::new("heat-exposure", "Heat exposure of seniors");
    let comfort = json!({
        "op": "linear_combination",
        "output": "utci",
        "terms": [{"column": "value", "weight": MRT_WEIGHT}],
        "intercept": MRT_OFFSET
    });
    b.node("mrt", "load.grid", op(json!({"op": "load_grid", "data": synth::radiant_grid_asc(seed)})))?
        .node("comfort", "analysis.linear_combination", op(comfort))?
        .edge("mrt", "comfort")?
        .node("hoods", "load.geojson", hoods_loader(seed))?
        .node("located", "transform.spatial_join", op(json!({"op": "spatial_join", "how": "inner"})))?
        .edge_to("comfort", "located", 0)?
        .edge_to("hoods", "located", 1)?
        .node(
            "by_hood",
            "transform.group_by",
            op(json!({"op": "group_by", "keys": ["hood", "seniors"], "aggs": [{"column": "utci", "func": "mean"}]})),
        )?
        .edge("located", "by_hood")?
        .interaction("pick_chart", 1)?
        .edge("by_hood", "pick_chart")?
        .node(
            "scatter",
            "view.chart",
            op(json!({"view": "chart", "mark": "point", "x": "seniors", "y": "mean_utci", "color": "hood"})),
        )?
        .edge("pick_chart", "scatter")?
        .interaction("pick_map", 2)?
        .edge("hoods", "pick_map")?
        .edge_to("pick_chart", "pick_map", 1)?
        .link("pick_chart", "pick_map", "hood", "hood")?
        .node("hood_map", "view.map", op(json!({"view": "map", "color": "seniors"})))?
        .edge("pick_map", "hood_map")?;
    Ok(b.finish())
}
