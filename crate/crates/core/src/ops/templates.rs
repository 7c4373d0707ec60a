use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{parse_annotations, AnnotationError};
use crate::canonical::to_canonical_vec;
use crate::layers::LayerKind;
use crate::model::{NodeId, NodeKind, NodeSpec, PortKinds};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub template_id: String,
    pub kind: NodeKind,
    pub ports_in: Vec<PortKinds>,
    pub ports_out: Vec<PortKinds>,
    pub canonical_code: String,
    #[serde(default)]
    pub description: String,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

impl NodeTemplate {
    pub fn instantiate(&self, id: impl Into<NodeId>) -> NodeSpec {
        NodeSpec::new(
            id,
            self.kind,
            self.template_id.clone(),
            self.canonical_code.clone(),
            self.ports_in.clone(),
            self.ports_out.clone(),
        )
    }

    /// Single-file export document.
    pub fn export(&self) -> Vec<u8> {
        to_canonical_vec(&ExportDoc { format: EXPORT_FORMAT.into(), template: self.clone() })
    }

    pub fn import(bytes: &[u8]) -> Result<NodeTemplate, TemplateError> {
        let doc: ExportDoc = serde_json::from_slice(bytes).map_err(|e| TemplateError::BadDocument(e.to_string()))?;
        if doc.format != EXPORT_FORMAT {
            return Err(TemplateError::BadDocument(format!("unknown format {}", doc.format)));
        }
        Ok(doc.template)
    }
}

const EXPORT_FORMAT: &str = "urbanflow-template/1";

#[derive(Serialize, Deserialize)]
struct ExportDoc {
    format: String,
    template: NodeTemplate,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("template {0} already exists")]
    DuplicateTemplateId(String),
    #[error("invalid annotation syntax: {0}")]
    InvalidAnnotationSyntax(AnnotationError),
    #[error("unknown template {0}")]
    Unknown(String),
    #[error("bad template document: {0}")]
    BadDocument(String),
    #[error("io: {0}")]
    Io(String),
}

/// Template library. Registration takes the writer lock, so a template is
/// visible to every reader once `register` returns. With a backing file
/// every registration rewrites it.
#[derive(Debug, Default)]
pub struct TemplateRegistry {
    templates: RwLock<BTreeMap<String, NodeTemplate>>,
    file: Option<PathBuf>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let reg = Self::new();
        for t in builtin_templates() {
            reg.register(t).expect("builtin templates are valid");
        }
        reg
    }

    /// Open a registry persisted at `path`, seeding it with the builtins when
    /// the file does not exist yet.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref().to_path_buf();
        let templates = match std::fs::read(&path) {
            Ok(bytes) => {
                let list: Vec<NodeTemplate> =
                    serde_json::from_slice(&bytes).map_err(|e| TemplateError::BadDocument(e.to_string()))?;
                list.into_iter().map(|t| (t.template_id.clone(), t)).collect()
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                builtin_templates().into_iter().map(|t| (t.template_id.clone(), t)).collect()
            }
            Err(e) => return Err(TemplateError::Io(e.to_string())),
        };
        let reg = TemplateRegistry { templates: RwLock::new(templates), file: Some(path) };
        reg.persist(&reg.templates.read())?;
        Ok(reg)
    }

    pub fn register(&self, template: NodeTemplate) -> Result<String, TemplateError> {
        parse_annotations(&template.canonical_code).map_err(TemplateError::InvalidAnnotationSyntax)?;
        let mut map = self.templates.write();
        if map.contains_key(&template.template_id) {
            return Err(TemplateError::DuplicateTemplateId(template.template_id));
        }
        let id = template.template_id.clone();
        map.insert(id.clone(), template);
        if let Err(e) = self.persist(&map) {
            map.remove(&id);
            return Err(e);
        }
        Ok(id)
    }

    pub fn import(&self, bytes: &[u8]) -> Result<String, TemplateError> {
        self.register(NodeTemplate::import(bytes)?)
    }

    pub fn get(&self, id: &str) -> Option<NodeTemplate> {
        self.templates.read().get(id).cloned()
    }

    pub fn require(&self, id: &str) -> Result<NodeTemplate, TemplateError> {
        self.get(id).ok_or_else(|| TemplateError::Unknown(id.to_string()))
    }

    /// Sorted by template id.
    pub fn list(&self, kind: Option<NodeKind>) -> Vec<NodeTemplate> {
        self.templates.read().values().filter(|t| kind.is_none_or(|k| t.kind == k)).cloned().collect()
    }

    fn persist(&self, map: &BTreeMap<String, NodeTemplate>) -> Result<(), TemplateError> {
        let Some(path) = &self.file else { return Ok(()) };
        let list: Vec<&NodeTemplate> = map.values().collect();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, to_canonical_vec(&list)).map_err(|e| TemplateError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| TemplateError::Io(e.to_string()))
    }
}

fn builtin(
    id: &str,
    kind: NodeKind,
    ports_in: Vec<PortKinds>,
    ports_out: Vec<PortKinds>,
    code: &str,
    description: &str,
) -> NodeTemplate {
    NodeTemplate {
        template_id: id.into(),
        kind,
        ports_in,
        ports_out,
        canonical_code: code.into(),
        description: description.into(),
        author: "system".into(),
        created_at: DateTime::<Utc>::UNIX_EPOCH,
    }
}

/// The default library. Codes are op documents (see [`super::OpDoc`]) or view
/// documents, with widgets on the parameters users typically tune.
pub fn builtin_templates() -> Vec<NodeTemplate> {
    use LayerKind::*;
    use NodeKind as K;
    let any = PortKinds::any;
    let of = PortKinds::of;
    let tabular = || of(&[Table, Point, Grid, Mesh2d, Mesh3d, Network, Image]);
    vec![
        builtin("load.csv", K::Loader, vec![], vec![of(&[Table])], r#"{"op":"load_csv","path":"data.csv"}"#, "CSV file as a table"),
        builtin(
            "load.csv_points",
            K::Loader,
            vec![],
            vec![of(&[Point])],
            r#"{"op":"load_csv","path":"points.csv","lon":"lon","lat":"lat"}"#,
            "CSV file with lon/lat columns as points",
        ),
        builtin(
            "load.geojson",
            K::Loader,
            vec![],
            vec![of(&[Point, Mesh2d, Network])],
            r#"{"op":"load_geojson","path":"features.geojson","expect":"$[dropdown,Geometry,mesh2d|point|network,0]"}"#,
            "GeoJSON feature collection",
        ),
        builtin("load.grid", K::Loader, vec![], vec![of(&[Grid])], r#"{"op":"load_grid","path":"grid.asc"}"#, "ASCII grid raster"),
        builtin(
            "load.images",
            K::Loader,
            vec![],
            vec![of(&[Image])],
            r#"{"op":"load_image_manifest","path":"images.csv"}"#,
            "Geotagged image manifest",
        ),
        builtin("wrangle.remove_duplicates", K::Wrangle, vec![tabular()], vec![tabular()], r#"{"op":"remove_duplicates","keys":[]}"#, "Drop repeated records"),
        builtin(
            "wrangle.remove_missing",
            K::Wrangle,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"remove_missing","columns":[]}"#,
            "Drop records with nulls",
        ),
        builtin(
            "transform.normalize",
            K::Transform,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"normalize","column":"value","method":"$[dropdown,Method,zscore|minmax,0]"}"#,
            "Rescale a numeric column",
        ),
        builtin(
            "transform.group_by",
            K::Transform,
            vec![tabular()],
            vec![of(&[Table])],
            r#"{"op":"group_by","keys":["name"],"aggs":[{"column":"value","func":"$[dropdown,Aggregate,mean|sum|min|max|count,0]"}]}"#,
            "Aggregate records by key",
        ),
        builtin(
            "transform.spatial_join",
            K::Transform,
            vec![of(&[Point, Grid, Image]), of(&[Mesh2d])],
            vec![of(&[Point, Grid, Image])],
            r#"{"op":"spatial_join","how":"$[dropdown,Keep,left|inner,0]"}"#,
            "Attach containing polygon attributes",
        ),
        builtin(
            "transform.set_where",
            K::Transform,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"set_where","key":"id","equals":"B1","column":"height","value":$[slider,Height,0,200,1,20]}"#,
            "Override one attribute on matching records",
        ),
        builtin(
            "transform.scale",
            K::Transform,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"scale","column":"value","factor":$[slider,Factor,0,10,0.5,1]}"#,
            "Multiply a column",
        ),
        builtin("transform.extrude", K::Transform, vec![of(&[Mesh2d])], vec![of(&[Mesh3d])], r#"{"op":"extrude","height":"height"}"#, "Footprints to 3D"),
        builtin(
            "analysis.linear_combination",
            K::Analysis,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"linear_combination","output":"score","terms":[{"column":"value","weight":1}],"intercept":0}"#,
            "Weighted sum of columns",
        ),
        builtin(
            "analysis.margin_uncertainty",
            K::Analysis,
            vec![tabular()],
            vec![tabular()],
            r#"{"op":"margin_uncertainty","columns":["p0","p1"],"output":"uncertainty"}"#,
            "One minus the gap between the two most likely classes",
        ),
        builtin("view.table", K::Visualization, vec![any()], vec![any()], r#"{"view":"table","limit":$[slider,Rows,10,500,10,100]}"#, "Tabular view"),
        builtin(
            "view.chart",
            K::Visualization,
            vec![any()],
            vec![any()],
            r#"{"view":"chart","mark":"$[dropdown,Mark,bar|line|point,0]","x":"name","y":"value"}"#,
            "Bar, line or scatter chart",
        ),
        builtin(
            "view.map",
            K::Visualization,
            vec![of(&[Point, Grid, Mesh2d, Mesh3d, Network, Image])],
            vec![any()],
            r#"{"view":"map","color":"value","show_3d":$[checkbox,3D,false]}"#,
            "Map layer",
        ),
        builtin(
            "view.gallery",
            K::Visualization,
            vec![of(&[Image])],
            vec![of(&[Image])],
            r#"{"view":"gallery","sort_by":"uncertainty","descending":$[checkbox,Descending,true]}"#,
            "Image gallery",
        ),
        builtin("interaction", K::Interaction, vec![any()], vec![any()], "", "Selection relay between views"),
    ]
}
