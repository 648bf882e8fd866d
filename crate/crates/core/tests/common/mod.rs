//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ndarray::{array, Array1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use reglab::domain::{BBox, Detection, GroundTruth, Scene};
use reglab::optim::toys::{LassoProblem, ToyGflProblem};

/// Cyclic coordinate descent with exact coordinate minimization.
pub fn lasso_coordinate_descent(p: &LassoProblem) -> Array1<f64> {
    let (m, d) = p.a.dim();
    let mut x = Array1::<f64>::zeros(d);
    for _ in 0..100_000 {
        let mut max_change = 0.0f64;
        for j in 0..d {
            let col = p.a.column(j);
            let r = &p.b - &p.a.dot(&x) + &(&col * x[j]);
            let rho = col.dot(&r) / m as f64;
            let z = col.dot(&col) / m as f64;
            let new = rho.signum() * (rho.abs() - p.reg).max(0.0) / z;
            max_change = max_change.max((new - x[j]).abs());
            x[j] = new;
        }
        if max_change < 1e-15 {
            break;
        }
    }
    x
}

/// Best point of the 0.01 simplex grid for a three-class toy, its objective,
/// and the largest objective change to a neighbouring grid point.
pub fn simplex_grid(toy: &ToyGflProblem) -> (f64, f64) {
    let f = |i: usize, j: usize| {
        toy.value(
            array![
                i as f64 / 100.0,
                j as f64 / 100.0,
                (100 - i - j) as f64 / 100.0
            ]
            .view(),
        )
    };
    let mut best = ((0, 0), f64::INFINITY);
    for i in 0..=100 {
        for j in 0..=100 - i {
            let v = f(i, j);
            if v < best.1 {
                best = ((i, j), v);
            }
        }
    }
    let ((i, j), fb) = best;
    let mut cell = 0.0f64;
    for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)] {
        let (ni, nj) = (i as i64 + di, j as i64 + dj);
        if ni >= 0 && nj >= 0 && ni + nj <= 100 {
            cell = cell.max((f(ni as usize, nj as usize) - fb).abs());
        }
    }
    (fb, cell)
}

// ---------------------------------------------------------------------------
// Detection metrics by naive loops.

pub fn naive_iou(a: &BBox<f64>, b: &BBox<f64>) -> f64 {
    let ix0 = if a.x_min > b.x_min { a.x_min } else { b.x_min };
    let iy0 = if a.y_min > b.y_min { a.y_min } else { b.y_min };
    let ix1 = if a.x_max < b.x_max { a.x_max } else { b.x_max };
    let iy1 = if a.y_max < b.y_max { a.y_max } else { b.y_max };
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = (ix1 - ix0) * (iy1 - iy0);
    let area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
    let area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    inter / (area_a + area_b - inter)
}

/// TP flag per prediction of `class` in one scene, by repeated selection of the
/// highest-confidence unprocessed prediction.
pub fn naive_tp_flags(scene: &Scene<f64>, class: usize, thr: f64) -> Vec<(usize, bool)> {
    let n = scene.predictions.len();
    let mut done = vec![false; n];
    let mut taken = vec![false; scene.ground_truth.len()];
    let mut out = Vec::new();
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..n {
            if done[i] || scene.predictions[i].class != class {
                continue;
            }
            match pick {
                None => pick = Some(i),
                Some(j) if scene.predictions[i].confidence > scene.predictions[j].confidence => {
                    pick = Some(i)
                }
                _ => {}
            }
        }
        let Some(i) = pick else { break };
        done[i] = true;
        let mut best: Option<usize> = None;
        let mut best_iou = -1.0;
        for g in 0..scene.ground_truth.len() {
            if taken[g] || scene.ground_truth[g].class != class {
                continue;
            }
            let v = naive_iou(&scene.predictions[i].bbox, &scene.ground_truth[g].bbox);
            if v >= thr && v > best_iou {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            taken[g] = true;
        }
        out.push((i, best.is_some()));
    }
    out
}

pub fn naive_ap(scenes: &[Scene<f64>], class: usize, thr: f64) -> f64 {
    let mut rows: Vec<(f64, String, usize, bool)> = Vec::new();
    let mut n_gt = 0;
    for s in scenes {
        n_gt += s.ground_truth.iter().filter(|g| g.class == class).count();
        for (i, tp) in naive_tp_flags(s, class, thr) {
            rows.push((s.predictions[i].confidence, s.scene_id.clone(), i, tp));
        }
    }
    if n_gt == 0 {
        return 0.0;
    }
    // Insertion sort by (confidence desc, scene id asc, index asc).
    for k in 1..rows.len() {
        let mut j = k;
        while j > 0 {
            let (a, b) = (&rows[j - 1], &rows[j]);
            let out_of_order =
                a.0 < b.0 || (a.0 == b.0 && (a.1 > b.1 || (a.1 == b.1 && a.2 > b.2)));
            if !out_of_order {
                break;
            }
            rows.swap(j - 1, j);
            j -= 1;
        }
    }
    let mut tp = 0.0;
    let mut sum = 0.0;
    for (rank, row) in rows.iter().enumerate() {
        if row.3 {
            tp += 1.0;
            sum += tp / (rank + 1) as f64;
        }
    }
    sum / n_gt as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    pub ap50_95: f64,
}

pub fn naive_class_scores(scenes: &[Scene<f64>], class: usize) -> NaiveScores {
    let (mut tp, mut fp, mut gt) = (0u64, 0u64, 0u64);
    for s in scenes {
        gt += s.ground_truth.iter().filter(|g| g.class == class).count() as u64;
        for (_, is_tp) in naive_tp_flags(s, class, 0.5) {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if gt == 0 { 0.0 } else { tp as f64 / gt as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let mut ap_sum = 0.0;
    for k in 0..10 {
        ap_sum += naive_ap(scenes, class, (50 + 5 * k) as f64 / 100.0);
    }
    NaiveScores {
        precision,
        recall,
        f1,
        ap50: naive_ap(scenes, class, 0.5),
        ap50_95: ap_sum / 10.0,
    }
}

/// Random scenes with up to `max_per_class` ground truths per class, jittered
/// detections, spurious boxes and confidences on a coarse grid so ties occur.
pub fn random_scenes(
    seed: u64,
    n_scenes: usize,
    n_classes: usize,
    max_per_class: usize,
) -> Vec<Scene<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let boxed = |rng: &mut ChaCha8Rng| {
        let x = rng.random_range(0.0..60.0);
        let y = rng.random_range(0.0..60.0);
        BBox::new(
            x,
            y,
            x + rng.random_range(2.0..20.0),
            y + rng.random_range(2.0..20.0),
        )
        .unwrap()
    };
    let conf = |rng: &mut ChaCha8Rng| (rng.random_range(0..=20) as f64) / 20.0;
    (0..n_scenes)
        .map(|k| {
            let mut gts = Vec::new();
            let mut preds = Vec::new();
            for c in 0..n_classes {
                for _ in 0..rng.random_range(0..=max_per_class) {
                    let b = boxed(&mut rng);
                    gts.push(GroundTruth { bbox: b, class: c });
                    if rng.random_bool(0.8) {
                        let j: [f64; 4] = std::array::from_fn(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            1.5 * z
                        });
                        let (x0, x1) = (b.x_min + j[0], (b.x_max + j[2]).max(b.x_min + j[0] + 0.5));
                        let (y0, y1) = (b.y_min + j[1], (b.y_max + j[3]).max(b.y_min + j[1] + 0.5));
                        let class = if rng.random_bool(0.1) {
                            rng.random_range(0..n_classes)
                        } else {
                            c
                        };
                        let bbox = BBox::new(x0, y0, x1, y1).unwrap();
                        preds.push(Detection {
                            bbox,
                            class,
                            confidence: conf(&mut rng),
                        });
                    }
                }
                for _ in 0..rng.random_range(0..=2) {
                    preds.push(Detection {
                        bbox: boxed(&mut rng),
                        class: c,
                        confidence: conf(&mut rng),
                    });
                }
            }
            Scene::new(format!("scene-{k:05}"), gts, preds)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Monte Carlo.

/// Mean and standard error of `f(mu + sigma z)` over `pairs` antithetic pairs.
pub fn antithetic_mc(
    seed: u64,
    pairs: usize,
    mu: f64,
    sigma: f64,
    f: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..pairs {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = 0.5 * (f(mu + sigma * z) + f(mu - sigma * z));
        sum += v;
        sum_sq += v * v;
    }
    let n = pairs as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
