//! Linear-softmax classifier on Gaussian clusters, trained full-batch under a
//! selectable loss. Used to compare plain and rebalanced objectives on
//! imbalanced data.
//!
//! Everything here is `f64`.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotationCounts, ClassWeights, LossConfig, PredictionBatch, SampleGeometry};
use crate::error::{Error, Result};
use crate::loss::{
    cross_entropy, cross_entropy_gradient, gfl, gfl_gradient, reg_gradient, reg_loss,
};
use crate::metrics::{precision_recall_f1, ConfusionTally};
use crate::optim::{sgd_step, ParameterVector, Schedule};
use crate::rebalance::{
    inverse_frequency_weights, rebalanced_cross_entropy, rebalanced_cross_entropy_gradient,
};
use crate::uncertainty::{reg_u_gradient, reg_u_loss_for_batch};

/// Features with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSplit {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Counts keyed `class-0`, `class-1`, ...
    pub fn annotation_counts(&self) -> AnnotationCounts {
        AnnotationCounts::new(
            self.class_counts()
                .into_iter()
                .enumerate()
                .map(|(c, n)| (format!("class-{c}"), n)),
        )
    }
}

/// Largest-remainder split of `n` items by `proportions`; sums to `n` exactly.
pub fn allocate(n: usize, proportions: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .total_cmp(&(raw[a] - raw[a].floor()))
            .then(a.cmp(&b))
    });
    let assigned: usize = out.iter().sum();
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        out[c] += 1;
    }
    out
}

/// Gaussian clusters with identity covariance. Class `c` is centred at
/// `(separation / sqrt 2) e_c`, so every pair of means is `separation` apart.
/// Train and test sizes are split per class by `class_proportions`.
pub fn make_classification_task(
    class_proportions: &[f64],
    n_train: usize,
    n_test: usize,
    feature_dim: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledSplit, LabeledSplit)> {
    let c = class_proportions.len();
    if c == 0
        || class_proportions
            .iter()
            .any(|&p| !(p > 0.0 && p.is_finite()))
    {
        return Err(Error::invalid(
            "class_proportions",
            "proportions must be positive",
        ));
    }
    let sum: f64 = class_proportions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "class_proportions",
            format!("proportions sum to {sum}, not 1"),
        ));
    }
    if feature_dim < c {
        return Err(Error::InfeasibleConfig(format!(
            "{c} equidistant class means need feature_dim >= {c}, got {feature_dim}"
        )));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation", "must be finite and >= 0"));
    }
    let train_sizes = allocate(n_train, class_proportions);
    let test_sizes = allocate(n_test, class_proportions);
    if let Some(k) = (0..c).find(|&k| train_sizes[k] == 0 || test_sizes[k] == 0) {
        return Err(Error::InfeasibleConfig(format!(
            "class {k} receives no samples in one of the splits"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut draw = |sizes: &[usize]| {
        let n: usize = sizes.iter().sum();
        let mut features = Array2::zeros((n, feature_dim));
        let mut labels = Vec::with_capacity(n);
        let mut row = 0;
        for (class, &m) in sizes.iter().enumerate() {
            for _ in 0..m {
                for j in 0..feature_dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    features[[row, j]] = z + if j == class { offset } else { 0.0 };
                }
                labels.push(class);
                row += 1;
            }
        }
        LabeledSplit {
            features,
            labels,
            n_classes: c,
        }
    };
    let train = draw(&train_sizes);
    let test = draw(&test_sizes);
    Ok((train, test))
}

/// `logits = X W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub weight_matrix: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ToyModel {
    pub fn zeros(feature_dim: usize, n_classes: usize) -> Self {
        Self {
            weight_matrix: Array2::zeros((feature_dim, n_classes)),
            bias: Array1::zeros(n_classes),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight_matrix.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &Array2<f64>) -> Array2<f64> {
        features.dot(&self.weight_matrix) + &self.bias
    }

    pub fn predict(&self, features: &Array2<f64>) -> Vec<usize> {
        self.logits(features)
            .axis_iter(Axis(0))
            .map(|row| {
                // First maximum wins ties.
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| {
                        if v > best.1 {
                            (c, v)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    /// Weights (row-major) followed by the bias.
    pub fn to_flat(&self) -> Array1<f64> {
        self.weight_matrix
            .iter()
            .chain(self.bias.iter())
            .copied()
            .collect()
    }

    pub fn from_flat(flat: &Array1<f64>, feature_dim: usize, n_classes: usize) -> Result<Self> {
        let expected = feature_dim * n_classes + n_classes;
        if flat.len() != expected {
            return Err(Error::dims("flat parameters", expected, flat.len()));
        }
        let w = Array2::from_shape_vec(
            (feature_dim, n_classes),
            flat.iter().take(feature_dim * n_classes).copied().collect(),
        )
        .expect("shape checked");
        let b = flat.iter().skip(feature_dim * n_classes).copied().collect();
        Ok(Self {
            weight_matrix: w,
            bias: b,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossChoice {
    Ce,
    /// Rebalanced cross-entropy divided by the batch size.
    WeightedCe,
    Gfl,
    Reg,
    RegU,
}

/// Class-conditional distances for REG on a task without boxes: a sample is
/// `|N(near_mean, std)|` from its own class and `|N(far_mean, std)|` from the others.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGeometry {
    pub near_mean: f64,
    pub far_mean: f64,
    pub std: f64,
}

impl Default for SyntheticGeometry {
    fn default() -> Self {
        Self {
            near_mean: 0.5,
            far_mean: 3.0,
            std: 0.5,
        }
    }
}

impl SyntheticGeometry {
    pub fn sample(
        &self,
        labels: &[usize],
        n_classes: usize,
        seed: u64,
    ) -> Result<SampleGeometry<f64>> {
        let noise = Normal::new(0.0, self.std)
            .map_err(|e| Error::invalid("geometry.std", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Array2::from_shape_fn((labels.len(), n_classes), |(i, c)| {
            let mean = if labels[i] == c {
                self.near_mean
            } else {
                self.far_mean
            };
            (mean + noise.sample(&mut rng)).abs()
        });
        SampleGeometry::new(d)
    }
}

/// Gradient of a loss with respect to the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub weight_matrix: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Everything a loss needs besides the batch.
#[derive(Clone, Debug)]
pub struct LossSetup {
    pub choice: LossChoice,
    pub weights: ClassWeights<f64>,
    pub config: LossConfig<f64>,
    /// Required by REG and REG-U.
    pub geometry: Option<SampleGeometry<f64>>,
}

impl LossSetup {
    fn geometry(&self) -> Result<&SampleGeometry<f64>> {
        self.geometry
            .as_ref()
            .ok_or_else(|| Error::invalid("geometry", "REG losses need sample geometry"))
    }

    /// Loss value and `d loss / d logits` for a batch.
    pub fn evaluate(&self, batch: &PredictionBatch<f64>) -> Result<(f64, Array2<f64>)> {
        let cfg = &self.config;
        let n = batch.n_samples().max(1) as f64;
        Ok(match self.choice {
            LossChoice::Ce => (
                cross_entropy(batch, cfg.prob_floor).value,
                cross_entropy_gradient(batch, cfg.prob_floor)?.d_logits,
            ),
            LossChoice::WeightedCe => (
                rebalanced_cross_entropy(batch, &self.weights)?.value / n,
                rebalanced_cross_entropy_gradient(batch, &self.weights)?.d_logits / n,
            ),
            LossChoice::Gfl => (
                gfl(batch, &self.weights, cfg)?.value,
                gfl_gradient(batch, &self.weights, cfg)?.d_logits,
            ),
            LossChoice::Reg => {
                let g = self.geometry()?;
                (
                    reg_loss(batch, g, &self.weights, cfg)?.value,
                    reg_gradient(batch, g, &self.weights, cfg)?.d_logits,
                )
            }
            LossChoice::RegU => {
                let g = self.geometry()?;
                (
                    reg_u_loss_for_batch(batch, g, &self.weights, cfg)?.value,
                    reg_u_gradient(batch, g, &self.weights, cfg)?.d_logits,
                )
            }
        })
    }
}

/// Loss of `model` on `data` and its gradient through the linear layer.
pub fn loss_and_gradient(
    model: &ToyModel,
    data: &LabeledSplit,
    setup: &LossSetup,
) -> Result<(f64, ModelGradient)> {
    let batch = PredictionBatch::from_logits(model.logits(&data.features), data.labels.clone())?;
    let (loss, d_logits) = setup.evaluate(&batch)?;
    let grad = ModelGradient {
        weight_matrix: data.features.t().dot(&d_logits),
        bias: d_logits.sum_axis(Axis(0)),
    };
    Ok((loss, grad))
}

/// Fraction of each class's samples that are misclassified; 0 for absent classes.
pub fn per_class_error(predicted: &[usize], labels: &[usize], n_classes: usize) -> Vec<f64> {
    let mut wrong = vec![0u64; n_classes];
    let mut total = vec![0u64; n_classes];
    for (&p, &y) in predicted.iter().zip(labels) {
        total[y] += 1;
        wrong[y] += u64::from(p != y);
    }
    wrong
        .iter()
        .zip(&total)
        .map(|(&w, &t)| if t == 0 { 0.0 } else { w as f64 / t as f64 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training loss before this epoch's update.
    pub loss: f64,
    /// Training error per class before this epoch's update.
    pub per_class_error: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_choice: LossChoice,
    pub per_epoch: Vec<EpochRecord>,
    /// Held-out scores, one entry per class.
    pub final_metrics: Vec<ClassScores>,
    pub test_accuracy: f64,
    pub model: ToyModel,
}

impl TrainReport {
    pub fn test_errors(&self) -> Vec<f64> {
        self.final_metrics.iter().map(|m| m.error).collect()
    }

    /// Population variance of the held-out per-class errors.
    pub fn error_variance(&self) -> f64 {
        let e = self.test_errors();
        let mean = e.iter().sum::<f64>() / e.len().max(1) as f64;
        e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len().max(1) as f64
    }

    /// Per-epoch training errors as CSV: `epoch,loss,class_0,...`.
    pub fn to_csv(&self) -> String {
        let c = self
            .per_epoch
            .first()
            .map_or(0, |r| r.per_class_error.len());
        let mut out = String::from("epoch,loss");
        for k in 0..c {
            out.push_str(&format!(",class_{k}"));
        }
        out.push('\n');
        for r in &self.per_epoch {
            out.push_str(&format!("{},{}", r.epoch, r.loss));
            for e in &r.per_class_error {
                out.push_str(&format!(",{e}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Held-out precision, recall, F1 and error per class.
pub fn evaluate_model(model: &ToyModel, data: &LabeledSplit) -> (Vec<ClassScores>, f64) {
    let pred = model.predict(&data.features);
    let errors = per_class_error(&pred, &data.labels, data.n_classes);
    let scores = (0..data.n_classes)
        .map(|c| {
            let tp = pred
                .iter()
                .zip(&data.labels)
                .filter(|(&p, &y)| p == c && y == c)
                .count() as u64;
            let fp = pred
                .iter()
                .zip(&data.labels)
                .filter(|(&p, &y)| p == c && y != c)
                .count() as u64;
            let fn_ = data.labels.iter().filter(|&&y| y == c).count() as u64 - tp;
            let (precision, recall, f1) =
                precision_recall_f1::<f64>(ConfusionTally { tp, fp, fn_ });
            ClassScores {
                precision,
                recall,
                f1,
                error: errors[c],
            }
        })
        .collect();
    let correct = pred
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    (scores, correct as f64 / data.len().max(1) as f64)
}

/// Full-batch gradient descent for `epochs` epochs.
pub fn train(
    model: ToyModel,
    train_set: &LabeledSplit,
    test_set: &LabeledSplit,
    setup: &LossSetup,
    schedule: Schedule<f64>,
    epochs: usize,
) -> Result<TrainReport> {
    if epochs == 0 {
        return Err(Error::invalid("epochs", "must be >= 1"));
    }
    if train_set.features.ncols() != model.feature_dim()
        || test_set.features.ncols() != model.feature_dim()
    {
        return Err(Error::dims(
            "feature dimension",
            model.feature_dim(),
            train_set.features.ncols(),
        ));
    }
    if train_set.n_classes != model.n_classes() {
        return Err(Error::dims(
            "class count",
            model.n_classes(),
            train_set.n_classes,
        ));
    }
    let (d, c) = (model.feature_dim(), model.n_classes());
    let mut params = ParameterVector::euclidean(model.to_flat())?;
    let mut schedule = schedule;
    let mut per_epoch = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let current = ToyModel::from_flat(params.theta(), d, c)?;
        let (loss, grad) = loss_and_gradient(&current, train_set, setup)?;
        if !loss.is_finite() {
            return Err(Error::DivergenceDetected { epoch });
        }
        let pred = current.predict(&train_set.features);
        per_epoch.push(EpochRecord {
            epoch,
            loss,
            per_class_error: per_class_error(&pred, &train_set.labels, c),
        });
        let flat_grad: Array1<f64> = grad
            .weight_matrix
            .iter()
            .chain(grad.bias.iter())
            .copied()
            .collect();
        (params, schedule) = sgd_step(&params, flat_grad.view(), &schedule)?;
        if params.theta().iter().any(|v| !v.is_finite()) {
            return Err(Error::DivergenceDetected { epoch });
        }
    }
    let model = ToyModel::from_flat(params.theta(), d, c)?;
    let (final_metrics, test_accuracy) = evaluate_model(&model, test_set);
    Ok(TrainReport {
        loss_choice: setup.choice,
        per_epoch,
        final_metrics,
        test_accuracy,
        model,
    })
}

/// Settings of the imbalanced two-loss comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RebalanceStudy {
    pub class_proportions: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub feature_dim: usize,
    pub separation: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for RebalanceStudy {
    fn default() -> Self {
        Self {
            class_proportions: vec![0.95, 0.05],
            n_train: 1000,
            n_test: 1000,
            feature_dim: 2,
            separation: 2.0,
            learning_rate: 0.5,
            epochs: 200,
        }
    }
}

/// Plain and inverse-frequency-weighted cross-entropy trained on the same data.
#[derive(Clone, Debug, PartialEq)]
pub struct RebalanceOutcome {
    pub plain: TrainReport,
    pub weighted: TrainReport,
}

impl RebalanceStudy {
    pub fn run(&self, seed: u64) -> Result<RebalanceOutcome> {
        let (train_set, test_set) = make_classification_task(
            &self.class_proportions,
            self.n_train,
            self.n_test,
            self.feature_dim,
            self.separation,
            seed,
        )?;
        let c = self.class_proportions.len();
        let schedule = Schedule::constant(self.learning_rate)?;
        let run = |choice, weights: ClassWeights<f64>| {
            let setup = LossSetup {
                choice,
                weights,
                config: LossConfig::default(),
                geometry: None,
            };
            train(
                ToyModel::zeros(self.feature_dim, c),
                &train_set,
                &test_set,
                &setup,
                schedule,
                self.epochs,
            )
        };
        let weights = inverse_frequency_weights(&train_set.annotation_counts())?;
        Ok(RebalanceOutcome {
            plain: run(LossChoice::Ce, ClassWeights::uniform(c))?,
            weighted: run(LossChoice::WeightedCe, weights)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::WeightScheme;

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(1000, &[0.9, 0.1]), vec![900, 100]);
        assert_eq!(allocate(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(allocate(7, &[0.5, 0.25, 0.25]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn task_shapes_and_counts() {
        let (tr, te) = make_classification_task(&[0.9, 0.1], 1000, 200, 3, 2.0, 1).unwrap();
        assert_eq!(tr.class_counts(), vec![900, 100]);
        assert_eq!(te.class_counts(), vec![180, 20]);
        assert_eq!(tr.features.dim(), (1000, 3));
        let counts = make_classification_task(&[0.95, 0.05], 1000, 100, 2, 1.0, 0)
            .unwrap()
            .0
            .annotation_counts();
        assert_eq!(counts.imbalance_ratio(), Some(19.0));
        let again = make_classification_task(&[0.9, 0.1], 1000, 200, 3, 2.0, 1).unwrap();
        assert_eq!(again.0, tr);
    }

    #[test]
    fn task_errors() {
        assert!(matches!(
            make_classification_task(&[0.5, 0.6], 10, 10, 2, 1.0, 0),
            Err(Error::InvalidArgument { .. })
        ));
        assert!(matches!(
            make_classification_task(&[0.5, 0.5], 10, 10, 1, 1.0, 0),
            Err(Error::InfeasibleConfig(_))
        ));
        assert!(matches!(
            make_classification_task(&[0.99, 0.01], 10, 10, 2, 1.0, 0),
            Err(Error::InfeasibleConfig(_))
        ));
        assert!(make_classification_task(&[1.0, 0.0], 10, 10, 2, 1.0, 0).is_err());
    }

    fn setup(choice: LossChoice, c: usize) -> LossSetup {
        LossSetup {
            choice,
            weights: ClassWeights::uniform(c),
            config: LossConfig::default(),
            geometry: None,
        }
    }

    #[test]
    fn separable_task_is_learned() {
        for seed in 0..5 {
            let (tr, te) = make_classification_task(&[0.5, 0.5], 400, 400, 2, 10.0, seed).unwrap();
            let r = train(
                ToyModel::zeros(2, 2),
                &tr,
                &te,
                &setup(LossChoice::Ce, 2),
                Schedule::constant(0.5).unwrap(),
                100,
            )
            .unwrap();
            assert!(r.test_accuracy >= 0.99);
            assert!(r.test_errors().iter().all(|&e| e <= 0.01));
            assert_eq!(r.per_epoch.len(), 100);
            assert!(r.per_epoch.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
        }
    }

    #[test]
    fn focal_without_focusing_tracks_cross_entropy() {
        let (tr, te) = make_classification_task(&[0.7, 0.2, 0.1], 300, 90, 3, 1.5, 4).unwrap();
        let mut gfl_setup = setup(LossChoice::Gfl, 3);
        gfl_setup.config.gamma = 0.0;
        let s = Schedule::constant(0.3).unwrap();
        let a = train(
            ToyModel::zeros(3, 3),
            &tr,
            &te,
            &setup(LossChoice::Ce, 3),
            s,
            50,
        )
        .unwrap();
        let b = train(ToyModel::zeros(3, 3), &tr, &te, &gfl_setup, s, 50).unwrap();
        let diff = (&a.model.to_flat() - &b.model.to_flat())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff <= 1e-9, "{diff}");
        for (x, y) in a.per_epoch.iter().zip(&b.per_epoch) {
            assert!((x.loss - y.loss).abs() <= 1e-9);
        }
    }

    #[test]
    fn divergence_is_detected() {
        let (tr, te) = make_classification_task(&[0.5, 0.5], 100, 100, 2, 50.0, 0).unwrap();
        let weights = ClassWeights::new(vec![1e300, 1e300], WeightScheme::Uniform).unwrap();
        let bad = LossSetup {
            choice: LossChoice::WeightedCe,
            weights,
            config: LossConfig::default(),
            geometry: None,
        };
        let err = train(
            ToyModel::zeros(2, 2),
            &tr,
            &te,
            &bad,
            Schedule::constant(1e10).unwrap(),
            10,
        );
        assert!(
            matches!(err, Err(Error::DivergenceDetected { .. })),
            "{err:?}"
        );
    }

    #[test]
    fn reg_needs_geometry() {
        let (tr, te) = make_classification_task(&[0.5, 0.5], 20, 20, 2, 1.0, 0).unwrap();
        let err = train(
            ToyModel::zeros(2, 2),
            &tr,
            &te,
            &setup(LossChoice::Reg, 2),
            Schedule::constant(0.1).unwrap(),
            1,
        );
        assert!(matches!(
            err,
            Err(Error::InvalidArgument {
                arg: "geometry",
                ..
            })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let (tr, te) = make_classification_task(&[0.8, 0.2], 200, 100, 2, 1.0, 9).unwrap();
            let mut s = setup(LossChoice::Reg, 2);
            s.geometry = Some(
                SyntheticGeometry::default()
                    .sample(&tr.labels, 2, 9)
                    .unwrap(),
            );
            train(
                ToyModel::zeros(2, 2),
                &tr,
                &te,
                &s,
                Schedule::constant(0.5).unwrap(),
                30,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
        let csv = run().to_csv();
        assert!(csv.starts_with("epoch,loss,class_0,class_1\n1,"));
        assert_eq!(csv.lines().count(), 31);
    }
}
