//! Gaussian prediction uncertainty: the marginalized probability, the
//! uncertainty-aware REG loss, Gaussian KL divergence and the variational free
//! energy.
//!
//! A Gaussian over a probability leaks outside `[0, 1]`, and the mean of an
//! unclamped Gaussian is just `mu`. Probabilities are therefore clamped to
//! `[prob_floor, 1 - prob_floor]` inside the expectation, which makes the
//! marginal differ from `mu` near the ends of the interval.

pub mod quadrature;

use ndarray::Array2;

use crate::domain::{ClassWeights, LossConfig, PredictionBatch, SampleGeometry};
use crate::error::{Error, Result};
use crate::loss::{
    focal_term, refinement_term, softmax_focal_gradient, weighted_focal_per_sample, LossGradient,
    LossValue,
};
use crate::scalar::{clamp_prob, Real};

pub use quadrature::{GaussHermite, PiecewiseGaussian};

/// Per-entry Gaussian `N(mu[i, c], sigma_sq[i, c])` over predicted probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalState<T = f64> {
    mu: Array2<T>,
    sigma_sq: Array2<T>,
}

impl<T: Real> VariationalState<T> {
    pub fn new(mu: Array2<T>, sigma_sq: Array2<T>) -> Result<Self> {
        if mu.dim() != sigma_sq.dim() {
            return Err(Error::dims(
                "variational variances",
                mu.dim(),
                sigma_sq.dim(),
            ));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mu", "means must be finite"));
        }
        if sigma_sq.iter().any(|&v| !v.is_finite() || v < T::zero()) {
            return Err(Error::invalid(
                "sigma_sq",
                "variances must be finite and >= 0",
            ));
        }
        Ok(Self { mu, sigma_sq })
    }

    pub fn with_uniform_variance(mu: Array2<T>, sigma_sq: T) -> Result<Self> {
        let v = Array2::from_elem(mu.dim(), sigma_sq);
        Self::new(mu, v)
    }

    /// `N(1/C, 0.25)` for every entry.
    pub fn default_prior(n_samples: usize, n_classes: usize) -> Self {
        let mean = T::one() / T::from_count(n_classes.max(1));
        Self {
            mu: Array2::from_elem((n_samples, n_classes), mean),
            sigma_sq: Array2::from_elem((n_samples, n_classes), T::lit(0.25)),
        }
    }

    pub fn mu(&self) -> &Array2<T> {
        &self.mu
    }

    pub fn sigma_sq(&self) -> &Array2<T> {
        &self.sigma_sq
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mu.dim()
    }
}

/// How the prediction probability is marginalized over its Gaussian.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Marginalization {
    /// `E[clamp(p)]`.
    #[default]
    Clamped,
    /// `E[p] = mu`, which reduces the uncertainty-aware loss to REG.
    Literal,
}

/// `E[clamp(p, floor, 1 - floor)]` for `p ~ N(mu, sigma_sq)`.
pub fn marginal_prob<T: Real>(mu: T, sigma_sq: T, prob_floor: T) -> T {
    marginal_prob_with(PiecewiseGaussian::standard(), mu, sigma_sq, prob_floor)
}

pub fn marginal_prob_with<T: Real>(
    rule: &PiecewiseGaussian,
    mu: T,
    sigma_sq: T,
    prob_floor: T,
) -> T {
    let upper = T::one() - prob_floor;
    rule.expect(mu, sigma_sq.sqrt(), &[prob_floor, upper], |x| {
        clamp_prob(x, prob_floor)
    })
}

/// `d marginal_prob / d mu`, which is the probability that `p` lands inside the
/// clamping interval.
pub fn marginal_prob_derivative<T: Real>(mu: T, sigma_sq: T, prob_floor: T) -> T {
    let upper = T::one() - prob_floor;
    if sigma_sq == T::zero() {
        return if mu > prob_floor && mu < upper {
            T::one()
        } else {
            T::zero()
        };
    }
    PiecewiseGaussian::standard().expect(mu, sigma_sq.sqrt(), &[prob_floor, upper], |x| {
        if x > prob_floor && x < upper {
            T::one()
        } else {
            T::zero()
        }
    })
}

fn marginalize<T: Real>(mode: Marginalization, mu: T, sigma_sq: T, floor: T) -> T {
    match mode {
        Marginalization::Clamped => marginal_prob(mu, sigma_sq, floor),
        Marginalization::Literal => mu,
    }
}

/// REG evaluated at the marginalized probabilities `p_hat = marginal_prob(mu, sigma_sq)`.
pub fn reg_u_loss<T: Real>(
    state: &VariationalState<T>,
    labels: &[usize],
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossValue<T>> {
    reg_u_loss_with(
        state,
        labels,
        geometry,
        weights,
        config,
        Marginalization::Clamped,
    )
}

pub fn reg_u_loss_with<T: Real>(
    state: &VariationalState<T>,
    labels: &[usize],
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
    mode: Marginalization,
) -> Result<LossValue<T>> {
    config.validate()?;
    check_shapes(state.dim(), labels, geometry, weights)?;
    let g = refinement_term(geometry, config);
    let alpha = weights.alpha();
    let floor = config.prob_floor;
    let var = state.sigma_sq();
    let per_sample = weighted_focal_per_sample(
        state.mu().view(),
        labels,
        config.gamma,
        config.all_class_sum,
        |i, c, mu| clamp_prob(marginalize(mode, mu, var[[i, c]], floor), floor),
        |i, c| alpha[c] * g[[i, c]],
    );
    Ok(LossValue::from_per_sample(per_sample))
}

/// Uncertainty-aware loss of a model batch: the means are the batch
/// probabilities and every entry has variance `config.sigma_sq`.
pub fn reg_u_loss_for_batch<T: Real>(
    batch: &PredictionBatch<T>,
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossValue<T>> {
    let state = VariationalState::with_uniform_variance(batch.probs().clone(), config.sigma_sq)?;
    reg_u_loss(&state, batch.labels(), geometry, weights, config)
}

/// Analytic gradient of [`reg_u_loss_for_batch`] with respect to the logits.
pub fn reg_u_gradient<T: Real>(
    batch: &PredictionBatch<T>,
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<LossGradient<T>> {
    config.validate()?;
    if batch.logits().is_none() {
        return Err(Error::MissingLogits);
    }
    check_shapes(batch.probs().dim(), batch.labels(), geometry, weights)?;
    let g = refinement_term(geometry, config);
    let alpha = weights.alpha();
    let (floor, var) = (config.prob_floor, config.sigma_sq);
    let n = batch.n_samples();
    let scale = if n == 0 {
        T::zero()
    } else {
        T::one() / T::from_count(n)
    };
    let d_logits = softmax_focal_gradient(
        batch.probs().view(),
        batch.labels(),
        config.gamma,
        config.all_class_sum,
        scale,
        |_, _, mu| {
            let p = clamp_prob(marginal_prob(mu, var, floor), floor);
            (p, marginal_prob_derivative(mu, var, floor))
        },
        |i, c| alpha[c] * g[[i, c]],
    );
    Ok(LossGradient { d_logits })
}

/// Closed-form `KL(N(q_mu, q_var) || N(p_mu, p_var))`.
pub fn gaussian_kl<T: Real>(q_mu: T, q_var: T, p_mu: T, p_var: T) -> Result<T> {
    for v in [q_var, p_var] {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::NonPositiveVariance(v.as_f64()));
        }
    }
    let diff = q_mu - p_mu;
    let half = T::lit(0.5);
    Ok(half * (p_var / q_var).ln() + (q_var + diff * diff) / (T::lit(2.0) * p_var) - half)
}

/// KL divergence as `E_q[ln q(X) - ln p(X)]` by Gauss-Hermite quadrature.
pub fn gaussian_kl_quadrature<T: Real>(
    rule: &GaussHermite,
    q_mu: T,
    q_var: T,
    p_mu: T,
    p_var: T,
) -> Result<T> {
    for v in [q_var, p_var] {
        if !(v > T::zero()) {
            return Err(Error::NonPositiveVariance(v.as_f64()));
        }
    }
    let log_density = |x: T, m: T, v: T| {
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        -T::lit(0.5) * ((two_pi * v).ln() + (x - m) * (x - m) / v)
    };
    Ok(rule.expect(q_mu, q_var.sqrt(), |x| {
        log_density(x, q_mu, q_var) - log_density(x, p_mu, p_var)
    }))
}

/// `E_q[L_REG] + sum_{i,c} KL(q_{i,c} || prior_{i,c})`.
///
/// The expectation integrates the loss integrand of every entry under its own
/// Gaussian; it is not the loss evaluated at the mean.
pub fn free_energy<T: Real>(
    state: &VariationalState<T>,
    prior: &VariationalState<T>,
    labels: &[usize],
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<T> {
    Ok(free_energy_terms(state, prior, labels, geometry, weights, config)?.total())
}

/// The two parts of the free energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy<T = f64> {
    pub expected_loss: T,
    pub kl: T,
}

impl<T: Real> FreeEnergy<T> {
    pub fn total(&self) -> T {
        self.expected_loss + self.kl
    }
}

pub fn free_energy_terms<T: Real>(
    state: &VariationalState<T>,
    prior: &VariationalState<T>,
    labels: &[usize],
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
    config: &LossConfig<T>,
) -> Result<FreeEnergy<T>> {
    config.validate()?;
    check_shapes(state.dim(), labels, geometry, weights)?;
    if prior.dim() != state.dim() {
        return Err(Error::dims("prior", state.dim(), prior.dim()));
    }
    let mut kl = T::zero();
    for (((&qm, &qv), &pm), &pv) in state
        .mu()
        .iter()
        .zip(state.sigma_sq())
        .zip(prior.mu())
        .zip(prior.sigma_sq())
    {
        kl = kl + gaussian_kl(qm, qv, pm, pv)?;
    }

    let g = refinement_term(geometry, config);
    let alpha = weights.alpha();
    let (floor, gamma) = (config.prob_floor, config.gamma);
    let upper = T::one() - floor;
    let rule = PiecewiseGaussian::standard();
    let (n, n_classes) = state.dim();
    let mut expected = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        for c in crate::loss::active_classes(y, n_classes, config.all_class_sum) {
            let w = alpha[c] * g[[i, c]];
            if w == T::zero() {
                continue;
            }
            let (m, v) = (state.mu()[[i, c]], state.sigma_sq()[[i, c]]);
            let e = rule.expect(m, v.sqrt(), &[floor, upper], |x| {
                focal_term(clamp_prob(x, floor), gamma)
            });
            expected = expected + w * e;
        }
    }
    let expected_loss = if n == 0 {
        T::zero()
    } else {
        expected / T::from_count(n)
    };
    Ok(FreeEnergy { expected_loss, kl })
}

fn check_shapes<T: Real>(
    dim: (usize, usize),
    labels: &[usize],
    geometry: &SampleGeometry<T>,
    weights: &ClassWeights<T>,
) -> Result<()> {
    let (n, c) = dim;
    if labels.len() != n {
        return Err(Error::dims("labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(
            "labels",
            format!("label {bad} out of range for {c} classes"),
        ));
    }
    if geometry.shape() != dim {
        return Err(Error::dims("sample geometry", dim, geometry.shape()));
    }
    if weights.len() != c {
        return Err(Error::dims("class weights", c, weights.len()));
    }
    Ok(())
}
