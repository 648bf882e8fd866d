//! Detection metrics: IoU, greedy matching, precision/recall/F1 and average
//! precision over ranked detections.
//!
//! Zero denominators give 0 for precision, recall and F1 so reports are total.
//! A class without ground truth in the evaluated set is listed in the report
//! but excluded from the macro average.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{BBox, Scene};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Intersection over union of two boxes.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= T::zero() || ih <= T::zero() {
        return T::zero();
    }
    let inter = iw * ih;
    (inter / (a.area() + b.area() - inter)).min(T::one())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchedPair<T = f64> {
    pub prediction: usize,
    pub ground_truth: usize,
    pub iou: T,
}

/// Outcome of matching one class of one scene. Indices refer to the scene's
/// `predictions` and `ground_truth` vectors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult<T = f64> {
    pub pairs: Vec<MatchedPair<T>>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truth: Vec<usize>,
    pub threshold: T,
}

/// Prediction indices of `class_id` in ranking order: confidence descending,
/// then index ascending.
fn ranked_predictions<T: Real>(scene: &Scene<T>, class_id: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scene.predictions.len())
        .filter(|&i| scene.predictions[i].class == class_id)
        .collect();
    idx.sort_by(|&i, &j| {
        let (ci, cj) = (
            scene.predictions[i].confidence,
            scene.predictions[j].confidence,
        );
        cj.partial_cmp(&ci)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    idx
}

/// Greedy matching: each prediction, in ranking order, claims the unclaimed
/// ground truth of its class with the highest IoU at or above `threshold`.
/// IoU ties go to the lower ground-truth index.
pub fn match_scene<T: Real>(scene: &Scene<T>, class_id: usize, threshold: T) -> MatchResult<T> {
    let gts: Vec<usize> = (0..scene.ground_truth.len())
        .filter(|&g| scene.ground_truth[g].class == class_id)
        .collect();
    let mut claimed = vec![false; gts.len()];
    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    for p in ranked_predictions(scene, class_id) {
        let pb = &scene.predictions[p].bbox;
        let mut best: Option<(usize, T)> = None;
        for (k, &g) in gts.iter().enumerate() {
            if claimed[k] {
                continue;
            }
            let v = iou(pb, &scene.ground_truth[g].bbox);
            if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((k, v));
            }
        }
        match best {
            Some((k, v)) => {
                claimed[k] = true;
                pairs.push(MatchedPair {
                    prediction: p,
                    ground_truth: gts[k],
                    iou: v,
                });
            }
            None => unmatched_predictions.push(p),
        }
    }
    unmatched_predictions.sort_unstable();
    let unmatched_ground_truth = gts
        .iter()
        .zip(&claimed)
        .filter(|(_, &c)| !c)
        .map(|(&g, _)| g)
        .collect();
    MatchResult {
        pairs,
        unmatched_predictions,
        unmatched_ground_truth,
        threshold,
    }
}

/// Largest number of prediction/ground-truth pairs of `class_id` with IoU at
/// or above `threshold` that can be matched one-to-one.
pub fn optimal_tp_count<T: Real>(scene: &Scene<T>, class_id: usize, threshold: T) -> usize {
    let preds: Vec<usize> = (0..scene.predictions.len())
        .filter(|&i| scene.predictions[i].class == class_id)
        .collect();
    let gts: Vec<usize> = (0..scene.ground_truth.len())
        .filter(|&g| scene.ground_truth[g].class == class_id)
        .collect();
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|&p| {
            (0..gts.len())
                .filter(|&k| {
                    iou(&scene.predictions[p].bbox, &scene.ground_truth[gts[k]].bbox) >= threshold
                })
                .collect()
        })
        .collect();

    fn augment(
        u: usize,
        adj: &[Vec<usize>],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for &v in &adj[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                owner[v] = Some(u);
                return true;
            }
        }
        false
    }

    let mut owner = vec![None; gts.len()];
    (0..preds.len())
        .filter(|&u| augment(u, &adj, &mut vec![false; gts.len()], &mut owner))
        .count()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionTally {
    pub fn from_match<T>(m: &MatchResult<T>) -> Self {
        Self {
            tp: m.pairs.len() as u64,
            fp: m.unmatched_predictions.len() as u64,
            fn_: m.unmatched_ground_truth.len() as u64,
        }
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

fn ratio<T: Real>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::lit(num as f64) / T::lit(den as f64)
    }
}

/// `(precision, recall, f1)`; each is 0 when its denominator is 0.
pub fn precision_recall_f1<T: Real>(tally: ConfusionTally) -> (T, T, T) {
    let p: T = ratio(tally.tp, tally.tp + tally.fp);
    let r: T = ratio(tally.tp, tally.tp + tally.fn_);
    let f1 = if p + r == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) * p * r / (p + r)
    };
    (p, r, f1)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Mean of precision at each true-positive rank, over all ground truths.
    #[default]
    RankedPrecision,
    /// Area under the monotone precision envelope (all-point interpolation).
    AllPoint,
}

/// A scored prediction in the cross-scene ranking.
struct Ranked<'a, T> {
    confidence: T,
    scene_id: &'a str,
    index: usize,
    tp: bool,
}

fn rank<T: Real>(items: &mut [Ranked<'_, T>]) {
    items.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.scene_id.cmp(b.scene_id))
            .then(a.index.cmp(&b.index))
    });
}

fn ap_from_ranking<T: Real, I: IntoIterator<Item = bool>>(
    tp_flags: I,
    n_gt: usize,
    mode: ApMode,
) -> T {
    if n_gt == 0 {
        return T::zero();
    }
    let mut precisions_at_tp = Vec::new();
    let (mut tp, mut seen) = (0u64, 0u64);
    for is_tp in tp_flags {
        seen += 1;
        if is_tp {
            tp += 1;
            precisions_at_tp.push(ratio::<T>(tp, seen));
        }
    }
    if mode == ApMode::AllPoint {
        let mut envelope = T::zero();
        for p in precisions_at_tp.iter_mut().rev() {
            envelope = envelope.max(*p);
            *p = envelope;
        }
    }
    precisions_at_tp.iter().fold(T::zero(), |a, &p| a + p) / T::from_count(n_gt)
}

fn ranked_class<'a, T: Real>(
    scenes: &'a [Scene<T>],
    matches: &[Vec<bool>],
    class_id: usize,
) -> Vec<Ranked<'a, T>> {
    let mut items = Vec::new();
    for (scene, flags) in scenes.iter().zip(matches) {
        for (i, p) in scene.predictions.iter().enumerate() {
            if p.class == class_id {
                items.push(Ranked {
                    confidence: p.confidence,
                    scene_id: &scene.scene_id,
                    index: i,
                    tp: flags[i],
                });
            }
        }
    }
    rank(&mut items);
    items
}

/// Per-prediction true-positive flags of a scene, all classes matched at `threshold`.
fn tp_flags<T: Real>(scene: &Scene<T>, n_classes: usize, threshold: T) -> Vec<bool> {
    let mut flags = vec![false; scene.predictions.len()];
    for c in 0..n_classes {
        for pair in match_scene(scene, c, threshold).pairs {
            flags[pair.prediction] = true;
        }
    }
    flags
}

fn n_classes_in<T>(scenes: &[Scene<T>]) -> usize {
    scenes
        .iter()
        .flat_map(|s| {
            s.ground_truth
                .iter()
                .map(|g| g.class)
                .chain(s.predictions.iter().map(|p| p.class))
        })
        .max()
        .map_or(0, |c| c + 1)
}

/// Average precision of `class_id` at one IoU threshold, ranking predictions
/// across scenes by confidence (descending), scene id and prediction index.
/// Returns 0 when the class has no ground truth.
pub fn average_precision<T: Real>(scenes: &[Scene<T>], class_id: usize, threshold: T) -> T {
    average_precision_with(scenes, class_id, threshold, ApMode::default())
}

pub fn average_precision_with<T: Real>(
    scenes: &[Scene<T>],
    class_id: usize,
    threshold: T,
    mode: ApMode,
) -> T {
    let n_classes = n_classes_in(scenes).max(class_id + 1);
    let matches: Vec<Vec<bool>> = scenes
        .iter()
        .map(|s| tp_flags(s, n_classes, threshold))
        .collect();
    let n_gt = scenes
        .iter()
        .flat_map(|s| &s.ground_truth)
        .filter(|g| g.class == class_id)
        .count();
    let ranked = ranked_class(scenes, &matches, class_id);
    ap_from_ranking(ranked.iter().map(|r| r.tp), n_gt, mode)
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds<T: Real>() -> [T; 10] {
    std::array::from_fn(|k| T::lit((50 + 5 * k) as f64 / 100.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T = f64> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub ap50: T,
    pub ap50_95: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport<T = f64> {
    pub per_class: IndexMap<String, ClassMetrics<T>>,
    pub macro_avg: ClassMetrics<T>,
    /// Classes with at least one ground truth; the macro average runs over these.
    pub evaluated_classes: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions<T = f64> {
    /// Predictions below this confidence are ignored for precision, recall and F1.
    pub confidence_threshold: Option<T>,
    pub ap_mode: ApMode,
}

/// Per-class tallies at IoU `threshold`, optionally dropping low-confidence predictions.
pub fn class_tallies<T: Real>(
    scenes: &[Scene<T>],
    n_classes: usize,
    threshold: T,
    confidence_threshold: Option<T>,
) -> Vec<ConfusionTally> {
    let per_scene: Vec<Vec<ConfusionTally>> = scenes
        .par_iter()
        .map(|s| scene_tallies(s, n_classes, threshold, confidence_threshold))
        .collect();
    per_scene
        .iter()
        .fold(vec![ConfusionTally::default(); n_classes], |acc, t| {
            acc.iter().zip(t).map(|(a, b)| a.merge(*b)).collect()
        })
}

fn scene_tallies<T: Real>(
    scene: &Scene<T>,
    n_classes: usize,
    threshold: T,
    confidence_threshold: Option<T>,
) -> Vec<ConfusionTally> {
    let keep = |i: usize| confidence_threshold.is_none_or(|t| scene.predictions[i].confidence >= t);
    (0..n_classes)
        .map(|c| {
            // Dropping the lowest-ranked predictions leaves the greedy matches
            // of the others unchanged, so one matching serves every cutoff.
            let m = match_scene(scene, c, threshold);
            let tp = m.pairs.iter().filter(|p| keep(p.prediction)).count() as u64;
            let kept = scene
                .predictions
                .iter()
                .enumerate()
                .filter(|(i, p)| p.class == c && keep(*i))
                .count() as u64;
            let n_gt = scene.ground_truth.iter().filter(|g| g.class == c).count() as u64;
            ConfusionTally {
                tp,
                fp: kept - tp,
                fn_: n_gt - tp,
            }
        })
        .collect()
}

/// Full metric report: AP at 0.5, AP averaged over [`coco_thresholds`], and
/// precision/recall/F1 at IoU 0.5.
pub fn map_range<T: Real>(scenes: &[Scene<T>], class_names: &[String]) -> Result<MetricReport<T>> {
    map_range_with(scenes, class_names, &EvalOptions::default())
}

pub fn map_range_with<T: Real>(
    scenes: &[Scene<T>],
    class_names: &[String],
    options: &EvalOptions<T>,
) -> Result<MetricReport<T>> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n_classes = class_names.len();
    for s in scenes {
        s.validate(n_classes)?;
    }
    let thresholds = coco_thresholds::<T>();
    let mut n_gt = vec![0usize; n_classes];
    for g in scenes.iter().flat_map(|s| &s.ground_truth) {
        n_gt[g.class] += 1;
    }

    // ap[k][c]: AP of class c at thresholds[k].
    let ap: Vec<Vec<T>> = thresholds
        .iter()
        .map(|&thr| {
            let matches: Vec<Vec<bool>> = scenes
                .par_iter()
                .map(|s| tp_flags(s, n_classes, thr))
                .collect();
            (0..n_classes)
                .map(|c| {
                    let ranked = ranked_class(scenes, &matches, c);
                    ap_from_ranking(ranked.iter().map(|r| r.tp), n_gt[c], options.ap_mode)
                })
                .collect()
        })
        .collect();
    let tallies = class_tallies(
        scenes,
        n_classes,
        thresholds[0],
        options.confidence_threshold,
    );

    let mut per_class = IndexMap::new();
    let mut evaluated_classes = Vec::new();
    let mut sum = ClassMetrics::<T>::default();
    for (c, name) in class_names.iter().enumerate() {
        let (precision, recall, f1) = precision_recall_f1::<T>(tallies[c]);
        let ap50_95 =
            ap.iter().fold(T::zero(), |a, row| a + row[c]) / T::from_count(thresholds.len());
        let m = ClassMetrics {
            precision,
            recall,
            f1,
            ap50: ap[0][c],
            ap50_95,
        };
        if n_gt[c] > 0 {
            evaluated_classes.push(name.clone());
            sum.precision = sum.precision + m.precision;
            sum.recall = sum.recall + m.recall;
            sum.f1 = sum.f1 + m.f1;
            sum.ap50 = sum.ap50 + m.ap50;
            sum.ap50_95 = sum.ap50_95 + m.ap50_95;
        }
        per_class.insert(name.clone(), m);
    }
    let k = T::from_count(evaluated_classes.len().max(1));
    let macro_avg = ClassMetrics {
        precision: sum.precision / k,
        recall: sum.recall / k,
        f1: sum.f1 / k,
        ap50: sum.ap50 / k,
        ap50_95: sum.ap50_95 / k,
    };
    Ok(MetricReport {
        per_class,
        macro_avg,
        evaluated_classes,
    })
}

impl<T: Real> MetricReport<T> {
    /// Plain-text table in percent, one row per class and a final `all` row.
    /// Classes without ground truth are marked with `*`.
    pub fn to_table(&self) -> String {
        let width = self
            .per_class
            .keys()
            .map(|k| k.len() + 1)
            .chain([5])
            .max()
            .unwrap_or(5);
        let mut out = format!(
            "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}\n",
            "Class", "mAP50", "mAP50-95", "Precision", "Recall", "F1-score"
        );
        let row = |name: &str, m: &ClassMetrics<T>| {
            let pct = |v: T| format!("{:.2}", v.as_f64() * 100.0);
            format!(
                "{:<width$}  {:>8}  {:>8}  {:>9}  {:>8}  {:>8}\n",
                name,
                pct(m.ap50),
                pct(m.ap50_95),
                pct(m.precision),
                pct(m.recall),
                pct(m.f1)
            )
        };
        for (name, m) in &self.per_class {
            let label = if self.evaluated_classes.contains(name) {
                name.clone()
            } else {
                format!("{name}*")
            };
            out.push_str(&row(&label, m));
        }
        out.push_str(&row("all", &self.macro_avg));
        out
    }
}
