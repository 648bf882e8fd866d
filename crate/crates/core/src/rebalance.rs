//! Class-balancing weights from annotation counts and the rebalanced
//! (sum-form) weighted cross-entropy.

use crate::domain::{
    AnnotationCounts, ClassWeights, PredictionBatch, WeightScheme, DEFAULT_PROB_FLOOR,
};
use crate::error::{Error, Result};
use crate::loss::{clamp_with_derivative, LossGradient, LossValue};
use crate::scalar::{clamp_prob, Real};

fn checked_counts(counts: &AnnotationCounts) -> Result<()> {
    match counts.per_class().iter().find(|(_, &n)| n == 0) {
        Some((name, _)) => Err(Error::ZeroCountClass(name.clone())),
        None => Ok(()),
    }
}

/// `alpha_c = N_total / N_c`.
pub fn inverse_frequency_weights<T: Real>(counts: &AnnotationCounts) -> Result<ClassWeights<T>> {
    checked_counts(counts)?;
    let total = T::lit(counts.total() as f64);
    let alpha = counts.counts().map(|n| total / T::lit(n as f64)).collect();
    ClassWeights::new(alpha, WeightScheme::InverseFrequency)
}

/// `alpha_c = N_total / (C * N_c)`; a balanced dataset gets unit weights.
pub fn normalized_inverse_frequency_weights<T: Real>(
    counts: &AnnotationCounts,
) -> Result<ClassWeights<T>> {
    checked_counts(counts)?;
    let total = T::lit(counts.total() as f64);
    let c = T::from_count(counts.len());
    let alpha = counts
        .counts()
        .map(|n| total / (c * T::lit(n as f64)))
        .collect();
    ClassWeights::new(alpha, WeightScheme::InverseFrequencyNormalized)
}

/// Dispatch on a scheme; `DualOptimized` weights come from the primal-dual
/// solver, not from counts.
pub fn weights_for_scheme<T: Real>(
    counts: &AnnotationCounts,
    scheme: WeightScheme,
) -> Result<ClassWeights<T>> {
    match scheme {
        WeightScheme::Uniform => Ok(ClassWeights::uniform(counts.len())),
        WeightScheme::InverseFrequency => inverse_frequency_weights(counts),
        WeightScheme::InverseFrequencyNormalized => normalized_inverse_frequency_weights(counts),
        WeightScheme::DualOptimized => Err(Error::invalid(
            "scheme",
            "dual-optimized weights are produced by the primal-dual solver",
        )),
    }
}

/// `-sum_c alpha_c sum_i 1(y_i = c) ln p_c(x_i)`.
///
/// This is a sum, not a mean: `value` is `N` times the mean of `per_sample`.
/// Divide by `N` before comparing with the mean-form losses.
pub fn rebalanced_cross_entropy<T: Real>(
    batch: &PredictionBatch<T>,
    weights: &ClassWeights<T>,
) -> Result<LossValue<T>> {
    if weights.len() != batch.n_classes() {
        return Err(Error::dims(
            "class weights",
            batch.n_classes(),
            weights.len(),
        ));
    }
    let floor = T::lit(DEFAULT_PROB_FLOOR);
    let alpha = weights.alpha();
    let probs = batch.probs();
    let per_sample: Vec<T> = batch
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &y)| -alpha[y] * clamp_prob(probs[[i, y]], floor).ln())
        .collect();
    let value = per_sample.iter().fold(T::zero(), |a, &b| a + b);
    Ok(LossValue { value, per_sample })
}

/// Gradient of [`rebalanced_cross_entropy`] with respect to the logits.
pub fn rebalanced_cross_entropy_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    weights: &ClassWeights<T>,
) -> Result<LossGradient<T>> {
    if batch.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    if weights.len() != batch.n_classes() {
        return Err(Error::dims(
            "class weights",
            batch.n_classes(),
            weights.len(),
        ));
    }
    let floor = T::lit(DEFAULT_PROB_FLOOR);
    let alpha = weights.alpha();
    let probs = batch.probs();
    let mut d = probs.clone();
    for (i, &y) in batch.labels().iter().enumerate() {
        let (_, inside) = clamp_with_derivative(probs[[i, y]], floor);
        let mut row = d.row_mut(i);
        if inside == T::zero() {
            row.fill(T::zero());
            continue;
        }
        row[y] = row[y] - T::one();
        row.mapv_inplace(|v| v * alpha[y]);
    }
    Ok(LossGradient { d_logits: d })
}
