//! Small problems with known solutions, used by the `optimize` subcommand and
//! the optimizer tests.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ObjectiveEval;
use crate::domain::{softmax_rows, DEFAULT_PROB_FLOOR};
use crate::loss::focal_term;
use crate::scalar::clamp_prob;

/// `f(theta) = 0.5 * ||theta||^2`.
pub fn quadratic_bowl(theta: ArrayView1<'_, f64>) -> (f64, Array1<f64>) {
    (0.5 * theta.dot(&theta), theta.to_owned())
}

/// `f(theta) = -<theta, v>`; its minimizer on the unit sphere is `v / ||v||`.
#[derive(Clone, Debug)]
pub struct LinearFunctional {
    pub v: Array1<f64>,
}

impl LinearFunctional {
    pub fn random(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            v: Array1::from_shape_fn(dim, |_| StandardNormal.sample(&mut rng)),
        }
    }

    pub fn loss(&self, theta: ArrayView1<'_, f64>) -> f64 {
        -theta.dot(&self.v)
    }

    pub fn gradient(&self) -> Array1<f64> {
        -&self.v
    }

    pub fn maximizer(&self) -> Array1<f64> {
        &self.v / self.v.dot(&self.v).sqrt()
    }
}

/// `(1 / 2m) ||A x - b||^2 + reg * ||x||_1` with a sparse planted solution.
#[derive(Clone, Debug)]
pub struct LassoProblem {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub reg: f64,
}

impl LassoProblem {
    pub fn random(seed: u64, rows: usize, dim: usize, reg: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((rows, dim), |_| StandardNormal.sample(&mut rng));
        let truth = Array1::from_shape_fn(dim, |j| {
            if j % 2 == 0 {
                rng.random_range(-2.0..2.0)
            } else {
                0.0
            }
        });
        let noise = Array1::from_shape_fn(rows, |_| {
            0.1 * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }
        });
        let b = a.dot(&truth) + noise;
        Self { a, b, reg }
    }

    pub fn smooth_loss(&self, x: ArrayView1<'_, f64>) -> f64 {
        let r = self.a.dot(&x) - &self.b;
        r.dot(&r) / (2.0 * self.a.nrows() as f64)
    }

    pub fn smooth_gradient(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let r = self.a.dot(&x) - &self.b;
        self.a.t().dot(&r) / self.a.nrows() as f64
    }

    pub fn objective(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.smooth_loss(x) + self.reg * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Upper bound on the Lipschitz constant of the smooth gradient.
    pub fn lipschitz_bound(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>() / self.a.nrows() as f64
    }
}

/// Class-weight objective built from a fixed batch:
/// `sum_c alpha_c * L_c + ridge/2 * ||alpha||^2`, where `L_c` is the GFL
/// contribution of the samples labelled `c`. It does not depend on `theta`.
#[derive(Clone, Debug)]
pub struct ToyGflProblem {
    pub class_losses: Array1<f64>,
    pub ridge: f64,
}

impl ToyGflProblem {
    pub fn random(seed: u64, n_samples: usize, n_classes: usize, gamma: f64, ridge: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((n_samples, n_classes), |_| {
            1.5 * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            }
        });
        let labels: Vec<usize> = (0..n_samples)
            .map(|_| rng.random_range(0..n_classes))
            .collect();
        let probs = softmax_rows(logits.view());
        let mut class_losses = Array1::zeros(n_classes);
        for (i, &y) in labels.iter().enumerate() {
            let p = clamp_prob(probs[[i, y]], DEFAULT_PROB_FLOOR);
            class_losses[y] += focal_term(p, gamma) / n_samples as f64;
        }
        Self {
            class_losses,
            ridge,
        }
    }

    pub fn value(&self, alpha: ArrayView1<'_, f64>) -> f64 {
        alpha.dot(&self.class_losses) + 0.5 * self.ridge * alpha.dot(&alpha)
    }

    pub fn evaluate(
        &self,
        theta: ArrayView1<'_, f64>,
        alpha: ArrayView1<'_, f64>,
    ) -> ObjectiveEval<f64> {
        ObjectiveEval {
            value: self.value(alpha),
            grad_theta: Array1::zeros(theta.len()),
            grad_alpha: &self.class_losses + &(&alpha * self.ridge),
        }
    }
}
