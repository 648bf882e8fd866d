//! JSON dataset and count-table I/O.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{
    read_to_string, AnnotationCounts, BBox, ClassCatalog, Detection, GroundTruth, Scene, Task,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    catalog: ClassCatalog,
    #[serde(default)]
    task: Task,
    scenes: Vec<SceneFile>,
}

#[derive(Serialize, Deserialize)]
struct SceneFile {
    scene_id: String,
    ground_truth: Vec<GroundTruthFile>,
    predictions: Vec<PredictionFile>,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthFile {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
}

#[derive(Serialize, Deserialize)]
struct PredictionFile {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    class: String,
    confidence: f64,
}

/// A validated dataset: catalog, task and scenes sorted by `scene_id`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub catalog: ClassCatalog,
    pub task: Task,
    pub scenes: Vec<Scene<f64>>,
}

impl Dataset {
    pub fn new(catalog: ClassCatalog, task: Task, mut scenes: Vec<Scene<f64>>) -> Result<Self> {
        let n = catalog.classes(task).len();
        let mut ids = HashSet::new();
        for s in &scenes {
            s.validate(n)?;
            if !ids.insert(s.scene_id.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate scene_id `{}`",
                    s.scene_id
                )));
            }
        }
        scenes.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
        Ok(Self {
            catalog,
            task,
            scenes,
        })
    }

    pub fn class_names(&self) -> &[String] {
        self.catalog.classes(self.task)
    }

    /// Serialize to pretty JSON; the output is a pure function of the value.
    pub fn to_json(&self) -> String {
        let names = self.class_names();
        let file = DatasetFile {
            catalog: self.catalog.clone(),
            task: self.task,
            scenes: self
                .scenes
                .iter()
                .map(|s| SceneFile {
                    scene_id: s.scene_id.clone(),
                    ground_truth: s
                        .ground_truth
                        .iter()
                        .map(|g| GroundTruthFile {
                            bbox: g.bbox.to_array(),
                            class: names[g.class].clone(),
                        })
                        .collect(),
                    predictions: s
                        .predictions
                        .iter()
                        .map(|p| PredictionFile {
                            bbox: p.bbox.to_array(),
                            class: names[p.class].clone(),
                            confidence: p.confidence,
                        })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serialization cannot fail")
    }
}

fn classify(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse(e.to_string()),
    }
}

/// Parse dataset JSON. When `expected` is given the file's catalog must equal it.
pub fn parse_dataset(json: &str, expected: Option<&ClassCatalog>) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(json).map_err(classify)?;
    if let Some(cat) = expected {
        if &file.catalog != cat {
            return Err(Error::Schema(
                "dataset catalog differs from the expected catalog".into(),
            ));
        }
    }
    let task = file.task;
    let catalog = file.catalog;
    let lookup = |scene: &str, name: &str| {
        catalog.index_of(task, name).ok_or_else(|| {
            Error::Schema(format!("scene `{scene}`: unknown {task:?} class `{name}`"))
        })
    };
    let to_box = |b: [f64; 4]| BBox::new(b[0], b[1], b[2], b[3]);
    let mut scenes = Vec::with_capacity(file.scenes.len());
    for s in file.scenes {
        let ground_truth = s
            .ground_truth
            .iter()
            .map(|g| {
                Ok(GroundTruth {
                    bbox: to_box(g.bbox)?,
                    class: lookup(&s.scene_id, &g.class)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let predictions = s
            .predictions
            .iter()
            .map(|p| {
                Ok(Detection {
                    bbox: to_box(p.bbox)?,
                    class: lookup(&s.scene_id, &p.class)?,
                    confidence: p.confidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scenes.push(Scene::new(s.scene_id, ground_truth, predictions));
    }
    Dataset::new(catalog, task, scenes)
}

/// Read a dataset file, using the catalog the file declares.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_dataset(&read_to_string(path.as_ref())?, None)
}

/// Read a dataset file whose catalog must equal `catalog`; scenes come back sorted by id.
pub fn load_dataset(path: impl AsRef<Path>, catalog: &ClassCatalog) -> Result<Vec<Scene<f64>>> {
    Ok(parse_dataset(&read_to_string(path.as_ref())?, Some(catalog))?.scenes)
}

/// Parse a count table: either a flat `{"class": count}` object or the
/// `{"per_class": {...}, "total": n}` form that [`AnnotationCounts`] serializes to.
pub fn parse_counts(json: &str) -> Result<AnnotationCounts> {
    let value: serde_json::Value = serde_json::from_str(json).map_err(classify)?;
    if value.get("per_class").is_some_and(|v| v.is_object()) {
        return serde_json::from_value(value).map_err(classify);
    }
    let map: IndexMap<String, u64> = serde_json::from_value(value).map_err(classify)?;
    Ok(AnnotationCounts::new(map))
}

pub fn load_counts(path: impl AsRef<Path>) -> Result<AnnotationCounts> {
    parse_counts(&read_to_string(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scene(b: &str) -> String {
        format!(
            r#"{{"catalog": {{"detection": ["a", "b"], "segmentation": ["a"]}},
                "scenes": [{{"scene_id": "s0",
                             "ground_truth": [{{"box": {b}, "class": "a"}}],
                             "predictions": []}}]}}"#
        )
    }

    #[test]
    fn single_scene_roundtrip() {
        let ds = parse_dataset(&one_scene("[0, 0, 1, 1]"), None).unwrap();
        assert_eq!(ds.scenes.len(), 1);
        assert_eq!(ds.scenes[0].ground_truth.len(), 1);
        assert_eq!(ds.scenes[0].ground_truth[0].class, 0);
        let again = parse_dataset(&ds.to_json(), None).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn degenerate_box_is_geometry_error() {
        let err = parse_dataset(&one_scene("[1, 0, 1, 1]"), None).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)), "{err:?}");
    }

    #[test]
    fn error_categories() {
        assert!(matches!(
            parse_dataset("{not json", None),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_dataset(r#"{"scenes": []}"#, None),
            Err(Error::Schema(_))
        ));
        let bad_class = one_scene("[0, 0, 1, 1]").replace(r#""class": "a""#, r#""class": "zzz""#);
        assert!(matches!(
            parse_dataset(&bad_class, None),
            Err(Error::Schema(_))
        ));
        // NaN is not valid JSON
        assert!(parse_dataset(&one_scene("[0, 0, NaN, 1]"), None).is_err());
    }

    #[test]
    fn scenes_sorted_by_id() {
        let json = r#"{"catalog": {"detection": ["a"], "segmentation": []},
            "scenes": [
              {"scene_id": "z", "ground_truth": [], "predictions": []},
              {"scene_id": "b", "ground_truth": [], "predictions": []}]}"#;
        let ds = parse_dataset(json, None).unwrap();
        assert_eq!(ds.scenes[0].scene_id, "b");
    }

    #[test]
    fn counts_table_keeps_order() {
        let c = parse_counts(r#"{"x": 3, "a": 1}"#).unwrap();
        assert_eq!(c.class_names().collect::<Vec<_>>(), ["x", "a"]);
        assert_eq!(c.total(), 4);
        assert!(matches!(
            parse_counts(r#"{"x": -1}"#),
            Err(Error::Schema(_))
        ));
        assert!(matches!(parse_counts("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn counts_accept_both_layouts() {
        let flat = parse_counts(r#"{"x": 3, "a": 1}"#).unwrap();
        let full = parse_counts(&serde_json::to_string(&flat).unwrap()).unwrap();
        assert_eq!(flat, full);
        let bad = r#"{"per_class": {"x": 3}, "total": 5}"#;
        assert!(matches!(parse_counts(bad), Err(Error::Schema(_))));
    }

    #[test]
    fn fixture_counts() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/");
        let det = load_counts(format!("{dir}appendix_counts.json")).unwrap();
        assert_eq!(det, AnnotationCounts::road_asset_detection());
        let seg = load_counts(format!("{dir}appendix_segmentation_counts.json")).unwrap();
        assert_eq!(seg, AnnotationCounts::road_asset_segmentation());
    }
}
