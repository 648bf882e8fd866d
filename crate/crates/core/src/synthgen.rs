//! Seeded synthetic scenes whose ground-truth class counts hit a target table
//! exactly, with predictions derived from a configurable imperfect detector.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    AnnotationCounts, BBox, ClassCatalog, Dataset, Detection, GroundTruth, SampleGeometry, Scene,
    Task,
};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Noise model of the simulated detector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorQuality {
    /// Standard deviation of the Gaussian jitter added to each box corner.
    pub localization_noise_std: f64,
    /// Probability that a detection carries a wrong class.
    pub confusion_rate: f64,
    /// Probability that a ground truth yields no detection.
    pub miss_rate: f64,
    /// Expected number of spurious detections per scene.
    pub false_positive_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub counts: AnnotationCounts,
    pub scene_count: usize,
    #[serde(default = "default_extent")]
    pub image_extent: (f64, f64),
    #[serde(default = "default_box_size")]
    pub box_size_range: (f64, f64),
    #[serde(default = "default_capacity")]
    pub max_objects_per_scene: usize,
    #[serde(default)]
    pub detector_quality: DetectorQuality,
    #[serde(default)]
    pub seed: u64,
}

fn default_extent() -> (f64, f64) {
    (640.0, 640.0)
}

fn default_box_size() -> (f64, f64) {
    (16.0, 128.0)
}

fn default_capacity() -> usize {
    64
}

impl GeneratorConfig {
    pub fn new(counts: AnnotationCounts, scene_count: usize, seed: u64) -> Self {
        Self {
            counts,
            scene_count,
            image_extent: default_extent(),
            box_size_range: default_box_size(),
            max_objects_per_scene: default_capacity(),
            detector_quality: DetectorQuality::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let q = &self.detector_quality;
        for (name, p) in [
            ("confusion_rate", q.confusion_rate),
            ("miss_rate", q.miss_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    "detector_quality",
                    format!("{name} must lie in [0, 1], got {p}"),
                ));
            }
        }
        if !(q.false_positive_rate >= 0.0 && q.false_positive_rate.is_finite()) {
            return Err(Error::invalid(
                "detector_quality",
                "false_positive_rate must be finite and >= 0",
            ));
        }
        if !(q.localization_noise_std >= 0.0 && q.localization_noise_std.is_finite()) {
            return Err(Error::invalid(
                "detector_quality",
                "localization_noise_std must be finite and >= 0",
            ));
        }
        let (w, h) = self.image_extent;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid("image_extent", "extents must be positive"));
        }
        let (lo, hi) = self.box_size_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid("box_size_range", "need 0 < min <= max"));
        }
        if hi > w.min(h) {
            return Err(Error::InfeasibleConfig(format!(
                "box size {hi} does not fit a {w}x{h} image"
            )));
        }
        let capacity = self.scene_count as u64 * self.max_objects_per_scene as u64;
        if self.counts.total() > capacity {
            return Err(Error::InfeasibleConfig(format!(
                "{} annotations exceed the capacity of {} scenes x {} objects",
                self.counts.total(),
                self.scene_count,
                self.max_objects_per_scene
            )));
        }
        Ok(())
    }
}

fn scene_id(k: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(5);
    format!("scene-{k:0width$}")
}

fn random_box(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig) -> BBox<f64> {
    let (lo, hi) = cfg.box_size_range;
    let (w_img, h_img) = cfg.image_extent;
    let w = rng.random_range(lo..=hi);
    let h = rng.random_range(lo..=hi);
    let x = rng.random_range(0.0..=w_img - w);
    let y = rng.random_range(0.0..=h_img - h);
    BBox {
        x_min: x,
        y_min: y,
        x_max: x + w,
        y_max: y + h,
    }
}

/// Sorted pair with a minimal positive extent, so jitter never yields a degenerate box.
fn ordered(a: f64, b: f64) -> (f64, f64) {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    (lo, hi.max(lo + 1e-6))
}

/// Generate `scene_count` scenes. Class indices follow the order of `config.counts`.
///
/// Ground truths are dealt round-robin over scenes in class order. Every ground
/// truth consumes the same random draws whatever the noise settings, so two
/// configs differing only in a rate produce coupled outputs.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<Scene<f64>>> {
    config.validate()?;
    let n = config.scene_count;
    let n_classes = config.counts.len();
    let q = config.detector_quality;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jitter = Normal::new(0.0, q.localization_noise_std).expect("validated std");
    let mut scenes: Vec<Scene<f64>> = (0..n)
        .map(|k| Scene::new(scene_id(k, n), vec![], vec![]))
        .collect();

    let mut k = 0usize;
    for (class, count) in config.counts.counts().enumerate() {
        for _ in 0..count {
            let bbox = random_box(&mut rng, config);
            let scene = &mut scenes[k % n];
            k += 1;
            scene.ground_truth.push(GroundTruth { bbox, class });

            let miss: f64 = rng.random();
            let d: [f64; 4] = std::array::from_fn(|_| jitter.sample(&mut rng));
            let flip: f64 = rng.random();
            let offset = rng.random_range(1..n_classes.max(2));
            let confidence = rng.random_range(0.5..=1.0);
            if miss < q.miss_rate {
                continue;
            }
            let (x0, x1) = ordered(bbox.x_min + d[0], bbox.x_max + d[2]);
            let (y0, y1) = ordered(bbox.y_min + d[1], bbox.y_max + d[3]);
            let pred_class = if n_classes > 1 && flip < q.confusion_rate {
                (class + offset) % n_classes
            } else {
                class
            };
            scene.predictions.push(Detection {
                bbox: BBox {
                    x_min: x0,
                    y_min: y0,
                    x_max: x1,
                    y_max: y1,
                },
                class: pred_class,
                confidence,
            });
        }
    }

    let whole = q.false_positive_rate.floor();
    let frac = q.false_positive_rate - whole;
    for scene in &mut scenes {
        let extra: f64 = rng.random();
        let m = whole as usize + usize::from(extra < frac);
        for _ in 0..m {
            let bbox = random_box(&mut rng, config);
            let class = rng.random_range(0..n_classes.max(1));
            let confidence = rng.random_range(0.0..=1.0);
            if n_classes > 0 {
                scene.predictions.push(Detection {
                    bbox,
                    class,
                    confidence,
                });
            }
        }
    }
    Ok(scenes)
}

/// Generate a dataset for `task`; the counts are reordered to the catalog's class order.
pub fn generate_dataset(
    config: &GeneratorConfig,
    catalog: &ClassCatalog,
    task: Task,
) -> Result<Dataset> {
    let counts = config.counts.conform_to(catalog, task)?;
    let cfg = GeneratorConfig {
        counts,
        ..config.clone()
    };
    Dataset::new(catalog.clone(), task, generate(&cfg)?)
}

/// Diagonal of the smallest rectangle holding every box of the scene; 1 for an empty scene.
pub fn scene_diagonal<T: Real>(scene: &Scene<T>) -> T {
    let boxes: Vec<&BBox<T>> = scene
        .ground_truth
        .iter()
        .map(|g| &g.bbox)
        .chain(scene.predictions.iter().map(|p| &p.bbox))
        .collect();
    if boxes.is_empty() {
        return T::one();
    }
    let x0 = boxes.iter().fold(T::infinity(), |m, b| m.min(b.x_min));
    let y0 = boxes.iter().fold(T::infinity(), |m, b| m.min(b.y_min));
    let x1 = boxes.iter().fold(T::neg_infinity(), |m, b| m.max(b.x_max));
    let y1 = boxes.iter().fold(T::neg_infinity(), |m, b| m.max(b.y_max));
    (x1 - x0).hypot(y1 - y0)
}

/// Distances from each prediction center to the nearest ground-truth center of
/// each class, one row per prediction. Classes absent from the scene get the
/// scene diagonal.
pub fn geometry_from_scene<T: Real>(
    scene: &Scene<T>,
    catalog: &ClassCatalog,
    task: Task,
) -> Result<SampleGeometry<T>> {
    geometry_from_scene_with(scene, catalog.classes(task).len(), None)
}

/// As [`geometry_from_scene`] with an explicit class count and absent-class distance.
pub fn geometry_from_scene_with<T: Real>(
    scene: &Scene<T>,
    n_classes: usize,
    sentinel: Option<T>,
) -> Result<SampleGeometry<T>> {
    scene.validate(n_classes)?;
    let sentinel = sentinel.unwrap_or_else(|| scene_diagonal(scene));
    let mut d = Array2::from_elem((scene.predictions.len(), n_classes), sentinel);
    for (i, p) in scene.predictions.iter().enumerate() {
        let (px, py) = p.bbox.center();
        let mut best = vec![T::infinity(); n_classes];
        for g in &scene.ground_truth {
            let (gx, gy) = g.bbox.center();
            let dist = (px - gx).hypot(py - gy);
            best[g.class] = best[g.class].min(dist);
        }
        for (c, b) in best.into_iter().enumerate() {
            if b.is_finite() {
                d[[i, c]] = b;
            }
        }
    }
    SampleGeometry::new(d)
}
