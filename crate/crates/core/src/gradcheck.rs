//! Central finite-difference checks of the analytic logit gradients.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    ClassWeights, LossConfig, PredictionBatch, RefinementDirection, SampleGeometry, WeightScheme,
};
use crate::error::Result;
use crate::trainer::{LossChoice, LossSetup};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `max|a - b| / max(max|a|, max|b|)`: the worst entry error measured against
/// the scale of the whole gradient. Zero when both are identically zero.
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let inf = |m: &Array2<f64>| m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let diff = analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numerical_gradient(
    x: &Array2<f64>,
    h: f64,
    mut f: impl FnMut(&Array2<f64>) -> Result<f64>,
) -> Result<Array2<f64>> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe)?;
        probe[idx] = orig - h;
        let down = f(&probe)?;
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    Ok(g)
}

/// A random loss-gradient test case.
#[derive(Clone, Debug)]
pub struct GradInstance {
    pub logits: Array2<f64>,
    pub labels: Vec<usize>,
    pub setup: LossSetup,
}

/// Instance grid used by [`run_suite`]: every trial cycles through the focusing
/// exponents, both refinement directions and the listed variances.
pub const GAMMAS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 5.0];
pub const SIGMA_SQS: [f64; 3] = [0.0, 0.01, 0.1];

pub fn random_instance(
    rng: &mut ChaCha8Rng,
    choice: LossChoice,
    trial: usize,
) -> Result<GradInstance> {
    let n = rng.random_range(2..=6);
    let c = rng.random_range(2..=5);
    let scale = Normal::new(0.0, 1.5).expect("valid std");
    let logits = Array2::from_shape_fn((n, c), |_| scale.sample(rng));
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    let geometry = SampleGeometry::new(Array2::from_shape_fn((n, c), |_| {
        rng.random_range(0.0..4.0)
    }))?;
    let alpha = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
    let config = LossConfig {
        gamma: GAMMAS[trial % GAMMAS.len()],
        beta: rng.random_range(0.5..2.0),
        delta: rng.random_range(0.0..2.0),
        sigma_sq: SIGMA_SQS[trial % SIGMA_SQS.len()],
        refinement_direction: if trial.is_multiple_of(2) {
            RefinementDirection::CloserIsHeavier
        } else {
            RefinementDirection::FartherIsHeavier
        },
        all_class_sum: trial % 7 == 3,
        ..LossConfig::default()
    };
    let weights = ClassWeights::new(alpha, WeightScheme::Uniform)?;
    Ok(GradInstance {
        logits,
        labels,
        setup: LossSetup {
            choice,
            weights,
            config,
            geometry: Some(geometry),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutcome {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Compares the analytic logit gradient of `instance` with central differences.
pub fn check_instance(instance: &GradInstance) -> Result<GradCheckOutcome> {
    let batch = PredictionBatch::from_logits(instance.logits.clone(), instance.labels.clone())?;
    let (_, analytic) = instance.setup.evaluate(&batch)?;
    let numeric = numerical_gradient(&instance.logits, FD_STEP, |z| {
        let b = PredictionBatch::from_logits(z.clone(), instance.labels.clone())?;
        Ok(instance.setup.evaluate(&b)?.0)
    })?;
    let max_absolute_error = analytic
        .iter()
        .zip(numeric.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(GradCheckOutcome {
        max_relative_error: relative_error(&analytic, &numeric),
        max_absolute_error,
    })
}

/// Worst-case errors for each loss over `trials` random instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub seed: u64,
    pub trials: usize,
    pub step: f64,
    pub losses: Vec<(LossChoice, GradCheckOutcome)>,
}

impl GradSuiteReport {
    pub fn max_relative_error(&self) -> f64 {
        self.losses
            .iter()
            .map(|(_, o)| o.max_relative_error)
            .fold(0.0, f64::max)
    }
}

pub const SUITE_LOSSES: [LossChoice; 5] = [
    LossChoice::Ce,
    LossChoice::WeightedCe,
    LossChoice::Gfl,
    LossChoice::Reg,
    LossChoice::RegU,
];

pub fn run_suite(seed: u64, trials: usize) -> Result<GradSuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut losses = Vec::new();
    for choice in SUITE_LOSSES {
        let mut worst = GradCheckOutcome {
            max_relative_error: 0.0,
            max_absolute_error: 0.0,
        };
        for t in 0..trials {
            let inst = random_instance(&mut rng, choice, t)?;
            let o = check_instance(&inst)?;
            worst.max_relative_error = worst.max_relative_error.max(o.max_relative_error);
            worst.max_absolute_error = worst.max_absolute_error.max(o.max_absolute_error);
        }
        losses.push((choice, worst));
    }
    Ok(GradSuiteReport {
        seed,
        trials,
        step: FD_STEP,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn numerical_gradient_of_quadratic() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let g = numerical_gradient(&x, FD_STEP, |z| Ok(z.iter().map(|v| v * v).sum())).unwrap();
        for (a, b) in g.iter().zip(x.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn relative_error_scale() {
        let a = array![[1.0, 1e-12]];
        let b = array![[1.0, 2e-12]];
        assert!(relative_error(&a, &b) < 1e-11);
        assert_eq!(relative_error(&array![[0.0]], &array![[0.0]]), 0.0);
        assert_eq!(relative_error(&array![[2.0]], &array![[1.0]]), 0.5);
    }

    #[test]
    fn suite_is_reproducible_and_tight() {
        let a = run_suite(3, 12).unwrap();
        assert_eq!(a, run_suite(3, 12).unwrap());
        assert_eq!(a.losses.len(), SUITE_LOSSES.len());
        assert!(a.max_relative_error() <= 1e-5);
    }
}
