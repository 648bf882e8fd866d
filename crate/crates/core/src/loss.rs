//! Focal loss family: GFL, the spatial refinement weight, REG, the joint
//! detection/segmentation objective and the analytic gradient with respect to logits.
//!
//! Only the target class of each sample contributes unless
//! [`LossConfig::all_class_sum`] is set. Reductions run sequentially in index
//! order, so results are bit-identical from run to run.

use ndarray::{Array2, ArrayView2};

use crate::domain::{
    ClassWeights, LossConfig, PredictionBatch, RefinementDirection, SampleGeometry,
};
use crate::error::{Error, Result};
use crate::scalar::{clamp_prob, sigmoid, Real};

/// Loss value with the per-sample contributions it is the mean of.
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T = f64> {
    pub value: T,
    pub per_sample: Vec<T>,
}

impl<T: Real> LossValue<T> {
    /// Mean reduction; an empty batch has loss zero.
    pub fn from_per_sample(per_sample: Vec<T>) -> Self {
        let value = if per_sample.is_empty() {
            T::zero()
        } else {
            per_sample.iter().fold(T::zero(), |a, &b| a + b) / T::from_count(per_sample.len())
        };
        Self { value, per_sample }
    }
}

/// `d loss / d logits`, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient<T = f64> {
    pub d_logits: Array2<T>,
}

/// `-(1 - p)^gamma * ln p`.
#[inline]
pub fn focal_term<T: Real>(p: T, gamma: T) -> T {
    -(T::one() - p).powf(gamma) * p.ln()
}

/// Derivative of [`focal_term`] with respect to `p`.
#[inline]
pub fn focal_term_derivative<T: Real>(p: T, gamma: T) -> T {
    let q = T::one() - p;
    let focusing = if gamma == T::zero() {
        T::zero()
    } else {
        gamma * q.powf(gamma - T::one()) * p.ln()
    };
    focusing - q.powf(gamma) / p
}

/// Classes contributing for a sample with label `label`.
#[inline]
pub(crate) fn active_classes(
    label: usize,
    n_classes: usize,
    all_class_sum: bool,
) -> std::ops::Range<usize> {
    if all_class_sum {
        0..n_classes
    } else {
        label..label + 1
    }
}

/// Per-sample sums of `w(i, c) * focal_term(p(i, c))` over the active classes.
pub(crate) fn weighted_focal_per_sample<T: Real>(
    probs: ArrayView2<'_, T>,
    labels: &[usize],
    gamma: T,
    all_class_sum: bool,
    mut prob: impl FnMut(usize, usize, T) -> T,
    mut weight: impl FnMut(usize, usize) -> T,
) -> Vec<T> {
    let n_classes = probs.ncols();
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            active_classes(y, n_classes, all_class_sum).fold(T::zero(), |acc, c| {
                let w = weight(i, c);
                if w == T::zero() {
                    acc
                } else {
                    acc + w * focal_term(prob(i, c, probs[[i, c]]), gamma)
                }
            })
        })
        .collect()
}

/// Chain rule from per-entry focal terms through a softmax.
///
/// `transform` maps a softmax output `mu` to the probability fed into the focal
/// term together with its derivative; `scale` multiplies the final gradient
/// (`1/N` for mean reductions).
pub(crate) fn softmax_focal_gradient<T: Real>(
    softmax: ArrayView2<'_, T>,
    labels: &[usize],
    gamma: T,
    all_class_sum: bool,
    scale: T,
    mut transform: impl FnMut(usize, usize, T) -> (T, T),
    mut weight: impl FnMut(usize, usize) -> T,
) -> Array2<T> {
    let (n, n_classes) = softmax.dim();
    let mut grad = Array2::zeros((n, n_classes));
    let mut s = vec![T::zero(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        s.iter_mut().for_each(|v| *v = T::zero());
        let mut total = T::zero();
        for c in active_classes(y, n_classes, all_class_sum) {
            let w = weight(i, c);
            if w == T::zero() {
                continue;
            }
            let mu = softmax[[i, c]];
            let (p, dp_dmu) = transform(i, c, mu);
            if dp_dmu == T::zero() {
                continue;
            }
            let v = w * focal_term_derivative(p, gamma) * dp_dmu * mu;
            s[c] = v;
            total = total + v;
        }
        for k in 0..n_classes {
            grad[[i, k]] = (s[k] - softmax[[i, k]] * total) * scale;
        }
    }
    grad
}

/// Clamp with the derivative of the clamp.
#[inline]
pub(crate) fn clamp_with_derivative<T: Real>(mu: T, floor: T) -> (T, T) {
    if mu > floor && mu < T::one() - floor {
        (mu, T::one())
    } else {
        (clamp_prob(mu, floor), T::zero())
    }
}

fn check_weights<T: Real>(weights: &ClassWeights<T>, n_classes: usize) -> Result<()> {
    if weights.len() != n_classes {
        return Err(Error::dims("class weights", n_classes, weights.len()));
    }
    Ok(())
}

fn check_geometry<T: Real>(geometry: &SampleGeometry<T>, n: usize, c: usize) -> Result<()> {
    if geometry.shape() != (n, c) {
        return Err(Error::dims("sample geometry", (n, c), geometry.shape()));
    }
    Ok(())
}

/// Generalized focal loss `-(1/N) sum_i sum_c alpha_c (1 - p)^gamma ln p`.
///
/// Serves both the detection batch and the pixel-wise segmentation batch; only
/// the class list differs.
pub fn gfl<T: Real>(
    batch: &PredictionBatch<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossValue<T>> {
    config.validate()?;
    check_weights(weights, batch.n_classes())?;
    let alpha = weights.alpha();
    let floor = config.prob_floor;
    let per_sample = weighted_focal_per_sample(
        batch.probs().view(),
        batch.labels(),
        config.gamma,
        config.all_class_sum,
        |_, _, p| clamp_prob(p, floor),
        |_, c| alpha[c],
    );
    Ok(LossValue::from_per_sample(per_sample))
}

/// Pixel-wise segmentation GFL; identical arithmetic to [`gfl`].
pub fn seg_gfl<T: Real>(
    batch: &PredictionBatch<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossValue<T>> {
    gfl(batch, weights, config)
}

/// Mean cross-entropy of the target class, with the same probability clamping.
pub fn cross_entropy<T: Real>(batch: &PredictionBatch<T>, prob_floor: T) -> LossValue<T> {
    let probs = batch.probs();
    LossValue::from_per_sample(
        batch
            .labels()
            .iter()
            .enumerate()
            .map(|(i, &y)| -clamp_prob(probs[[i, y]], prob_floor).ln())
            .collect(),
    )
}

/// Gradient of [`cross_entropy`]: `(softmax - onehot) / N` away from the clamp.
pub fn cross_entropy_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    prob_floor: T,
) -> Result<LossGradient<T>> {
    if batch.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    let probs = batch.probs();
    let n = batch.n_samples();
    let mut d = probs.clone();
    for (i, &y) in batch.labels().iter().enumerate() {
        let (_, inside) = clamp_with_derivative(probs[[i, y]], prob_floor);
        if inside == T::zero() {
            d.row_mut(i).fill(T::zero());
        } else {
            d[[i, y]] = d[[i, y]] - T::one();
        }
    }
    if n > 0 {
        d.mapv_inplace(|v| v / T::from_count(n));
    }
    Ok(LossGradient { d_logits: d })
}

/// Refinement weights `g[i, c]`, a logistic function of `beta (d - delta)`.
pub fn refinement_term<T: Real>(geometry: &SampleGeometry<T>, config: &LossConfig<T>) -> Array2<T> {
    let (beta, delta) = (config.beta, config.delta);
    let sign = match config.refinement_direction {
        RefinementDirection::FartherIsHeavier => T::one(),
        RefinementDirection::CloserIsHeavier => -T::one(),
    };
    geometry
        .distances()
        .mapv(|d| sigmoid(sign * beta * (d - delta)))
}

/// GFL with each summand multiplied by its refinement weight `g[i, c]`.
pub fn reg_loss<T: Real>(
    batch: &PredictionBatch<T>,
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossValue<T>> {
    config.validate()?;
    check_weights(weights, batch.n_classes())?;
    check_geometry(geometry, batch.n_samples(), batch.n_classes())?;
    let g = refinement_term(geometry, config);
    let alpha = weights.alpha();
    let floor = config.prob_floor;
    let per_sample = weighted_focal_per_sample(
        batch.probs().view(),
        batch.labels(),
        config.gamma,
        config.all_class_sum,
        |_, _, p| clamp_prob(p, floor),
        |i, c| alpha[c] * g[[i, c]],
    );
    Ok(LossValue::from_per_sample(per_sample))
}

/// `L_det + lambda * L_seg`.
///
/// `per_sample` holds the detection contributions followed by the
/// lambda-scaled segmentation contributions; unlike single-task losses the
/// value is not their mean.
pub fn joint_loss<T: Real>(
    det: &LossValue<T>,
    seg: &LossValue<T>,
    config: &LossConfig<T>,
) -> LossValue<T> {
    let lambda = config.lambda_task;
    let per_sample = det
        .per_sample
        .iter()
        .copied()
        .chain(seg.per_sample.iter().map(|&v| lambda * v))
        .collect();
    LossValue {
        value: det.value + lambda * seg.value,
        per_sample,
    }
}

/// Analytic `d L_REG / d logits`. The refinement weights depend only on
/// ground-truth geometry and are held constant.
pub fn reg_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossGradient<T>> {
    config.validate()?;
    if batch.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    check_weights(weights, batch.n_classes())?;
    check_geometry(geometry, batch.n_samples(), batch.n_classes())?;
    let g = refinement_term(geometry, config);
    let alpha = weights.alpha();
    Ok(LossGradient {
        d_logits: focal_gradient(batch, config, |i, c| alpha[c] * g[[i, c]]),
    })
}

/// Analytic `d L_GFL / d logits`.
pub fn gfl_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossGradient<T>> {
    config.validate()?;
    if batch.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    check_weights(weights, batch.n_classes())?;
    let alpha = weights.alpha();
    Ok(LossGradient {
        d_logits: focal_gradient(batch, config, |_, c| alpha[c]),
    })
}

fn focal_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    config: &LossConfig<T>,
    weight: impl FnMut(usize, usize) -> T,
) -> Array2<T> {
    let n = batch.n_samples();
    let scale = if n == 0 {
        T::zero()
    } else {
        T::one() / T::from_count(n)
    };
    let floor = config.prob_floor;
    softmax_focal_gradient(
        batch.probs().view(),
        batch.labels(),
        config.gamma,
        config.all_class_sum,
        scale,
        |_, _, mu| clamp_with_derivative(mu, floor),
        weight,
    )
}
