//! Shared domain types: class catalogs, annotation counts, prediction batches,
//! sample geometry, loss configuration, class weights and scenes.

mod dataset;

pub use dataset::{load_counts, load_dataset, parse_counts, parse_dataset, read_dataset, Dataset};

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default clamping epsilon applied to probabilities before any logarithm.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-7;

pub const ROAD_ASSET_DETECTION_CLASSES: [&str; 7] = [
    "Pavilions",
    "Pedestrian bridges",
    "Information signs",
    "Single-arm poles",
    "Bus stops",
    "Warning signs",
    "Concrete guardrails",
];

pub const ROAD_ASSET_SEGMENTATION_CLASSES: [&str; 5] = [
    "Pavilions",
    "Pedestrian bridges",
    "Information signs",
    "Warning signs",
    "Concrete guardrails",
];

/// Which task a batch, dataset or count table belongs to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    Detection,
    Segmentation,
}

/// Ordered class names for the detection and segmentation tasks.
///
/// The two lists are kept apart: a probability row is always indexed by exactly
/// one of them, never by their concatenation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CatalogRepr", into = "CatalogRepr")]
pub struct ClassCatalog {
    detection: Vec<String>,
    segmentation: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct CatalogRepr {
    detection: Vec<String>,
    segmentation: Vec<String>,
}

impl TryFrom<CatalogRepr> for ClassCatalog {
    type Error = Error;
    fn try_from(r: CatalogRepr) -> Result<Self> {
        ClassCatalog::new(r.detection, r.segmentation)
    }
}

impl From<ClassCatalog> for CatalogRepr {
    fn from(c: ClassCatalog) -> Self {
        CatalogRepr {
            detection: c.detection,
            segmentation: c.segmentation,
        }
    }
}

impl ClassCatalog {
    pub fn new<S: Into<String>>(
        detection: impl IntoIterator<Item = S>,
        segmentation: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let detection: Vec<String> = detection.into_iter().map(Into::into).collect();
        let segmentation: Vec<String> = segmentation.into_iter().map(Into::into).collect();
        check_unique("detection", &detection)?;
        check_unique("segmentation", &segmentation)?;
        if let Some(stray) = segmentation.iter().find(|s| !detection.contains(s)) {
            return Err(Error::Schema(format!(
                "segmentation class `{stray}` is not a detection class"
            )));
        }
        Ok(Self {
            detection,
            segmentation,
        })
    }

    /// The seven detection and five segmentation road-asset classes.
    pub fn road_assets() -> Self {
        Self::new(
            ROAD_ASSET_DETECTION_CLASSES,
            ROAD_ASSET_SEGMENTATION_CLASSES,
        )
        .expect("built-in catalog is valid")
    }

    pub fn detection_classes(&self) -> &[String] {
        &self.detection
    }

    pub fn segmentation_classes(&self) -> &[String] {
        &self.segmentation
    }

    pub fn classes(&self, task: Task) -> &[String] {
        match task {
            Task::Detection => &self.detection,
            Task::Segmentation => &self.segmentation,
        }
    }

    pub fn index_of(&self, task: Task, name: &str) -> Option<usize> {
        self.classes(task).iter().position(|n| n == name)
    }

    /// `C_det + C_seg`.
    pub fn combined_class_count(&self) -> usize {
        self.detection.len() + self.segmentation.len()
    }
}

fn check_unique(list: &str, names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::Schema(format!("duplicate {list} class `{n}`")));
        }
    }
    Ok(())
}

/// Per-class annotation counts with their total, in a fixed class order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CountsRepr", into = "CountsRepr")]
pub struct AnnotationCounts {
    per_class: IndexMap<String, u64>,
    total: u64,
}

#[derive(Serialize, Deserialize)]
struct CountsRepr {
    per_class: IndexMap<String, u64>,
    total: u64,
}

impl TryFrom<CountsRepr> for AnnotationCounts {
    type Error = Error;
    fn try_from(r: CountsRepr) -> Result<Self> {
        let c = AnnotationCounts::new(r.per_class);
        if c.total != r.total {
            return Err(Error::Schema(format!(
                "count total {} does not equal the per-class sum {}",
                r.total, c.total
            )));
        }
        Ok(c)
    }
}

impl From<AnnotationCounts> for CountsRepr {
    fn from(c: AnnotationCounts) -> Self {
        CountsRepr {
            per_class: c.per_class,
            total: c.total,
        }
    }
}

impl AnnotationCounts {
    pub fn new<S: Into<String>>(pairs: impl IntoIterator<Item = (S, u64)>) -> Self {
        let per_class: IndexMap<String, u64> =
            pairs.into_iter().map(|(k, v)| (k.into(), v)).collect();
        let total = per_class.values().sum();
        Self { per_class, total }
    }

    /// Zero counts for every class of `task` in catalog order.
    pub fn zeros(catalog: &ClassCatalog, task: Task) -> Self {
        Self::new(catalog.classes(task).iter().map(|n| (n.clone(), 0)))
    }

    /// Mock detection annotation counts for the seven road-asset classes (total 3650).
    pub fn road_asset_detection() -> Self {
        Self::new(
            ROAD_ASSET_DETECTION_CLASSES
                .into_iter()
                .zip([200, 100, 700, 1500, 50, 800, 300]),
        )
    }

    /// Mock segmentation annotation counts for the five road-asset classes (total 1200).
    pub fn road_asset_segmentation() -> Self {
        Self::new(
            ROAD_ASSET_SEGMENTATION_CLASSES
                .into_iter()
                .zip([100, 50, 500, 400, 150]),
        )
    }

    pub fn per_class(&self) -> &IndexMap<String, u64> {
        &self.per_class
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.per_class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_class.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<u64> {
        self.per_class.get(name).copied()
    }

    pub fn class_names(&self) -> impl Iterator<Item = &str> {
        self.per_class.keys().map(String::as_str)
    }

    pub fn counts(&self) -> impl Iterator<Item = u64> + '_ {
        self.per_class.values().copied()
    }

    /// `N_max / N_min`; `None` when empty or some class has no annotations.
    pub fn imbalance_ratio(&self) -> Option<f64> {
        let max = self.counts().max()?;
        let min = self.counts().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }

    /// Reorder to the class order of `task` in `catalog`.
    ///
    /// Fails if the class sets differ.
    pub fn conform_to(&self, catalog: &ClassCatalog, task: Task) -> Result<Self> {
        let names = catalog.classes(task);
        if names.len() != self.len() {
            return Err(Error::Schema(format!(
                "counts list {} classes but the {task:?} catalog has {}",
                self.len(),
                names.len()
            )));
        }
        let mut out = IndexMap::with_capacity(names.len());
        for n in names {
            let v = self
                .get(n)
                .ok_or_else(|| Error::Schema(format!("counts are missing class `{n}`")))?;
            out.insert(n.clone(), v);
        }
        Ok(Self::new(out))
    }

    /// Find the catalog task whose class set matches these counts.
    pub fn infer_task(&self, catalog: &ClassCatalog) -> Option<Task> {
        [Task::Detection, Task::Segmentation]
            .into_iter()
            .find(|&t| {
                let names = catalog.classes(t);
                names.len() == self.len() && names.iter().all(|n| self.per_class.contains_key(n))
            })
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Real>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|z| (z - m).exp());
        let s: T = row.iter().copied().sum();
        row.mapv_inplace(|e| e / s);
    }
    out
}

/// Per-sample per-class probabilities with their true labels and, when the batch
/// came from a model, the logits they were produced from.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionBatch<T = f64> {
    probs: Array2<T>,
    logits: Option<Array2<T>>,
    labels: Vec<usize>,
}

impl<T: Real> PredictionBatch<T> {
    pub fn from_logits(logits: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("logits", "entries must be finite"));
        }
        check_labels(logits.ncols(), logits.nrows(), &labels)?;
        let probs = softmax_rows(logits.view());
        Ok(Self {
            probs,
            logits: Some(logits),
            labels,
        })
    }

    pub fn from_probs(probs: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        if probs
            .iter()
            .any(|&p| !p.is_finite() || p < T::zero() || p > T::one())
        {
            return Err(Error::invalid("probs", "entries must lie in [0, 1]"));
        }
        check_labels(probs.ncols(), probs.nrows(), &labels)?;
        Ok(Self {
            probs,
            logits: None,
            labels,
        })
    }

    pub fn probs(&self) -> &Array2<T> {
        &self.probs
    }

    pub fn logits(&self) -> Option<&Array2<T>> {
        self.logits.as_ref()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_samples(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.ncols()
    }
}

fn check_labels(n_classes: usize, n_rows: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n_rows {
        return Err(Error::dims("labels", n_rows, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::invalid(
            "labels",
            format!("label {bad} out of range for {n_classes} classes"),
        ));
    }
    Ok(())
}

/// Distances `d[i, c]` from sample `i` to the nearest ground truth of class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleGeometry<T = f64> {
    distances: Array2<T>,
}

impl<T: Real> SampleGeometry<T> {
    pub fn new(distances: Array2<T>) -> Result<Self> {
        if distances.iter().any(|&d| !d.is_finite() || d < T::zero()) {
            return Err(Error::invalid(
                "distances",
                "entries must be finite and non-negative",
            ));
        }
        Ok(Self { distances })
    }

    pub fn constant(n_samples: usize, n_classes: usize, d: T) -> Result<Self> {
        Self::new(Array2::from_elem((n_samples, n_classes), d))
    }

    pub fn distances(&self) -> &Array2<T> {
        &self.distances
    }

    pub fn shape(&self) -> (usize, usize) {
        self.distances.dim()
    }
}

/// Which way the refinement weight moves with distance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefinementDirection {
    /// `g = 1 / (1 + exp(+beta (d - delta)))`: nearer samples weigh more.
    #[default]
    #[serde(rename = "closer")]
    CloserIsHeavier,
    /// `g = 1 / (1 + exp(-beta (d - delta)))`: farther samples weigh more.
    #[serde(rename = "farther")]
    FartherIsHeavier,
}

/// Hyper-parameters of the focal loss family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig<T = f64> {
    /// Focusing exponent.
    pub gamma: T,
    /// Refinement sharpness.
    pub beta: T,
    /// Refinement distance threshold.
    pub delta: T,
    /// Weight of the segmentation loss in the joint objective.
    pub lambda_task: T,
    /// Prediction variance used by the uncertainty-aware loss.
    pub sigma_sq: T,
    pub refinement_direction: RefinementDirection,
    pub prob_floor: T,
    /// Sum the focal term over every class instead of only the target class.
    pub all_class_sum: bool,
}

impl<T: Real> Default for LossConfig<T> {
    fn default() -> Self {
        Self {
            gamma: T::lit(2.0),
            beta: T::one(),
            delta: T::zero(),
            lambda_task: T::one(),
            sigma_sq: T::zero(),
            refinement_direction: RefinementDirection::CloserIsHeavier,
            prob_floor: T::lit(DEFAULT_PROB_FLOOR),
            all_class_sum: false,
        }
    }
}

impl<T: Real> LossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &'static str, v: T| {
            if !v.is_finite() || v < T::zero() {
                Err(Error::invalid(
                    name,
                    format!("must be finite and >= 0, got {v}"),
                ))
            } else {
                Ok(())
            }
        };
        finite_nonneg("gamma", self.gamma)?;
        finite_nonneg("delta", self.delta)?;
        finite_nonneg("lambda_task", self.lambda_task)?;
        finite_nonneg("sigma_sq", self.sigma_sq)?;
        if !self.beta.is_finite() || self.beta <= T::zero() {
            return Err(Error::invalid(
                "beta",
                format!("must be finite and > 0, got {}", self.beta),
            ));
        }
        if !(self.prob_floor > T::zero() && self.prob_floor < T::lit(0.5)) {
            return Err(Error::invalid(
                "prob_floor",
                format!("must lie in (0, 0.5), got {}", self.prob_floor),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    Uniform,
    InverseFrequency,
    InverseFrequencyNormalized,
    DualOptimized,
}

/// Per-class balancing weights together with the scheme that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<T = f64> {
    alpha: Vec<T>,
    scheme: WeightScheme,
}

impl<T: Real> ClassWeights<T> {
    pub fn new(alpha: Vec<T>, scheme: WeightScheme) -> Result<Self> {
        if alpha.iter().any(|&a| !a.is_finite() || a < T::zero()) {
            return Err(Error::invalid("alpha", "weights must be finite and >= 0"));
        }
        Ok(Self { alpha, scheme })
    }

    pub fn uniform(n_classes: usize) -> Self {
        Self {
            alpha: vec![T::one(); n_classes],
            scheme: WeightScheme::Uniform,
        }
    }

    pub fn alpha(&self) -> &[T] {
        &self.alpha
    }

    pub fn scheme(&self) -> WeightScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Axis-aligned box with `x_min < x_max` and `y_min < y_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox<T = f64> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Real> BBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Geometry("box coordinates must be finite".into()));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::Geometry(format!(
                "degenerate box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            (self.x_min + self.x_max) * half,
            (self.y_min + self.y_max) * half,
        )
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth<T = f64> {
    pub bbox: BBox<T>,
    pub class: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection<T = f64> {
    pub bbox: BBox<T>,
    pub class: usize,
    pub confidence: T,
}

/// Ground-truth and predicted boxes of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T = f64> {
    pub scene_id: String,
    pub ground_truth: Vec<GroundTruth<T>>,
    pub predictions: Vec<Detection<T>>,
}

impl<T: Real> Scene<T> {
    pub fn new(
        scene_id: impl Into<String>,
        ground_truth: Vec<GroundTruth<T>>,
        predictions: Vec<Detection<T>>,
    ) -> Self {
        Self {
            scene_id: scene_id.into(),
            ground_truth,
            predictions,
        }
    }

    /// Checks class indices against `n_classes` and confidences against `[0, 1]`.
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        let bad_class = self
            .ground_truth
            .iter()
            .map(|g| g.class)
            .chain(self.predictions.iter().map(|p| p.class))
            .find(|&c| c >= n_classes);
        if let Some(c) = bad_class {
            return Err(Error::Schema(format!(
                "scene `{}`: class index {c} out of range for {n_classes} classes",
                self.scene_id
            )));
        }
        if let Some(p) = self
            .predictions
            .iter()
            .find(|p| !(p.confidence >= T::zero() && p.confidence <= T::one()))
        {
            return Err(Error::Schema(format!(
                "scene `{}`: confidence {} outside [0, 1]",
                self.scene_id, p.confidence
            )));
        }
        Ok(())
    }
}

/// Per-class ground-truth annotation counts over `scenes` for the classes of `task`.
pub fn summarize_counts<T: Real>(
    scenes: &[Scene<T>],
    catalog: &ClassCatalog,
    task: Task,
) -> AnnotationCounts {
    let names = catalog.classes(task);
    let mut counts = vec![0u64; names.len()];
    for gt in scenes.iter().flat_map(|s| &s.ground_truth) {
        if let Some(slot) = counts.get_mut(gt.class) {
            *slot += 1;
        }
    }
    AnnotationCounts::new(names.iter().cloned().zip(counts))
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    Ok(std::fs::read_to_string(path)?)
}
