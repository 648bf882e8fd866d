//! Desk-scale optimizers: plain SGD, Riemannian SGD on the unit sphere,
//! proximal gradient with an L1 penalty, and a primal-dual solver for class
//! weights constrained to the simplex.
//!
//! Every step takes its state by reference and returns the next state, so
//! independent solves can run side by side without shared mutation.

pub mod toys;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Manifold {
    Euclidean,
    UnitSphere,
}

impl Manifold {
    pub fn name(self) -> &'static str {
        match self {
            Manifold::Euclidean => "euclidean",
            Manifold::UnitSphere => "unit-sphere",
        }
    }
}

/// Largest tolerated `| ||theta|| - 1 |` for sphere parameters.
pub fn sphere_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(64.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T = f64> {
    theta: Array1<T>,
    manifold: Manifold,
}

impl<T: Real> ParameterVector<T> {
    pub fn new(theta: Array1<T>, manifold: Manifold) -> Result<Self> {
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("theta", "parameters must be finite"));
        }
        if manifold == Manifold::UnitSphere {
            let norm = l2_norm(theta.view());
            if (norm - T::one()).abs() > sphere_tolerance::<T>() {
                return Err(Error::invalid(
                    "theta",
                    format!("norm {norm} is not 1 on the unit sphere"),
                ));
            }
        }
        Ok(Self { theta, manifold })
    }

    pub fn euclidean(theta: Array1<T>) -> Result<Self> {
        Self::new(theta, Manifold::Euclidean)
    }

    /// Normalizes `theta` onto the sphere.
    pub fn on_sphere(theta: Array1<T>) -> Result<Self> {
        let norm = l2_norm(theta.view());
        if !(norm > T::zero()) || !norm.is_finite() {
            return Err(Error::ZeroNormAfterStep);
        }
        Ok(Self {
            theta: theta / norm,
            manifold: Manifold::UnitSphere,
        })
    }

    pub fn theta(&self) -> &Array1<T> {
        &self.theta
    }

    pub fn manifold(&self) -> Manifold {
        self.manifold
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn norm(&self) -> T {
        l2_norm(self.theta.view())
    }

    fn require(&self, manifold: Manifold) -> Result<()> {
        if self.manifold != manifold {
            return Err(Error::ManifoldMismatch {
                expected: manifold.name(),
                got: self.manifold.name(),
            });
        }
        Ok(())
    }

    fn check_grad(&self, grad: ArrayView1<'_, T>) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(Error::dims("gradient", self.theta.len(), grad.len()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    #[default]
    Constant,
    /// `eta_t = eta_0 / (1 + t)`.
    InverseT,
}

/// Learning-rate schedule with its iteration counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule<T = f64> {
    eta_0: T,
    decay: Decay,
    t: usize,
}

impl<T: Real> Schedule<T> {
    pub fn new(eta_0: T, decay: Decay) -> Result<Self> {
        if !(eta_0 > T::zero()) || !eta_0.is_finite() {
            return Err(Error::invalid(
                "eta_0",
                format!("step size must be positive and finite, got {eta_0}"),
            ));
        }
        Ok(Self { eta_0, decay, t: 0 })
    }

    pub fn constant(eta_0: T) -> Result<Self> {
        Self::new(eta_0, Decay::Constant)
    }

    pub fn eta(&self) -> T {
        match self.decay {
            Decay::Constant => self.eta_0,
            Decay::InverseT => self.eta_0 / (T::one() + T::from_count(self.t)),
        }
    }

    pub fn eta_0(&self) -> T {
        self.eta_0
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn advanced(&self) -> Self {
        Self {
            t: self.t + 1,
            ..*self
        }
    }
}

pub(crate) fn l2_norm<T: Real>(v: ArrayView1<'_, T>) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// `theta - eta_t * grad`.
pub fn sgd_step<T: Real>(
    params: &ParameterVector<T>,
    grad: ArrayView1<'_, T>,
    schedule: &Schedule<T>,
) -> Result<(ParameterVector<T>, Schedule<T>)> {
    params.require(Manifold::Euclidean)?;
    params.check_grad(grad)?;
    let theta = &params.theta - &(&grad * schedule.eta());
    Ok((
        ParameterVector {
            theta,
            manifold: Manifold::Euclidean,
        },
        schedule.advanced(),
    ))
}

/// Projection of `grad` onto the tangent space of the sphere at `theta`.
pub fn riemannian_gradient<T: Real>(
    theta: ArrayView1<'_, T>,
    grad: ArrayView1<'_, T>,
) -> Array1<T> {
    let mut r = grad.to_owned();
    // A second projection pass removes the radial residue left by rounding.
    for _ in 0..2 {
        let radial = theta.dot(&r);
        r.scaled_add(-radial, &theta);
    }
    r
}

/// Projected gradient step followed by the normalization retraction.
pub fn rsgd_step<T: Real>(
    params: &ParameterVector<T>,
    euclidean_grad: ArrayView1<'_, T>,
    schedule: &Schedule<T>,
) -> Result<(ParameterVector<T>, Schedule<T>)> {
    params.require(Manifold::UnitSphere)?;
    params.check_grad(euclidean_grad)?;
    let riem = riemannian_gradient(params.theta.view(), euclidean_grad);
    let moved = &params.theta - &(&riem * schedule.eta());
    let norm = l2_norm(moved.view());
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::ZeroNormAfterStep);
    }
    let theta = moved / norm;
    Ok((
        ParameterVector {
            theta,
            manifold: Manifold::UnitSphere,
        },
        schedule.advanced(),
    ))
}

/// Proximal operator of `step * reg_strength * ||.||_1`.
pub fn prox_soft_threshold<T: Real>(
    theta: ArrayView1<'_, T>,
    step: T,
    reg_strength: T,
) -> Array1<T> {
    let k = step * reg_strength;
    theta.mapv(|v| v.signum() * (v.abs() - k).max(T::zero()))
}

/// Gradient step on the smooth part followed by soft-thresholding.
pub fn prox_gradient_step<T: Real>(
    params: &ParameterVector<T>,
    grad: ArrayView1<'_, T>,
    schedule: &Schedule<T>,
    reg_strength: T,
) -> Result<(ParameterVector<T>, Schedule<T>)> {
    if !(reg_strength >= T::zero()) {
        return Err(Error::invalid("reg_strength", "must be >= 0"));
    }
    let (stepped, next) = sgd_step(params, grad, schedule)?;
    let theta = prox_soft_threshold(stepped.theta.view(), schedule.eta(), reg_strength);
    Ok((
        ParameterVector {
            theta,
            manifold: Manifold::Euclidean,
        },
        next,
    ))
}

/// Multipliers and primal class weights of the primal-dual solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualState<T = f64> {
    pub lambda: Array1<T>,
    pub alpha: Array1<T>,
}

impl<T: Real> DualState<T> {
    /// Zero multipliers and uniform weights.
    pub fn uniform(n_classes: usize) -> Self {
        let a = T::one() / T::from_count(n_classes.max(1));
        Self {
            lambda: Array1::zeros(n_classes),
            alpha: Array1::from_elem(n_classes, a),
        }
    }

    pub fn new(lambda: Array1<T>, alpha: Array1<T>) -> Result<Self> {
        if lambda.len() != alpha.len() {
            return Err(Error::dims("dual multipliers", alpha.len(), lambda.len()));
        }
        if alpha.is_empty() {
            return Err(Error::invalid("alpha", "at least one class is required"));
        }
        Ok(Self { lambda, alpha })
    }

    /// `sum(alpha) - 1`.
    pub fn constraint_residual(&self) -> T {
        self.alpha.sum() - T::one()
    }
}

/// How the equality constraint on the class weights is posed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintForm {
    /// One shared multiplier for `sum(alpha) = 1`; stored replicated across classes.
    #[default]
    Simplex,
    /// One multiplier per class for `alpha_c = 1/C`.
    PerClass,
}

/// Value and partial gradients of a primal-dual objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveEval<T = f64> {
    pub value: T,
    pub grad_theta: Array1<T>,
    pub grad_alpha: Array1<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimalDualOptions<T = f64> {
    pub form: ConstraintForm,
    /// Quadratic penalty `rho/2 * ||h(alpha)||^2` added to the Lagrangian.
    pub augmentation: T,
    /// Dual ascent step; defaults to the primal step.
    pub dual_step: Option<T>,
}

impl<T: Real> Default for PrimalDualOptions<T> {
    fn default() -> Self {
        Self {
            form: ConstraintForm::Simplex,
            augmentation: T::one(),
            dual_step: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PrimalDualRecord<T = f64> {
    pub t: usize,
    pub objective: T,
    /// `|sum(alpha) - 1|` after the iteration.
    pub residual: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualOutcome<T = f64> {
    pub theta: Array1<T>,
    pub state: DualState<T>,
    pub iterations: usize,
    /// False when `max_iters` ran out before the tolerance was met.
    pub converged: bool,
    pub trace: Vec<PrimalDualRecord<T>>,
}

pub fn primal_dual_solve<T: Real, F>(
    objective: F,
    theta: Array1<T>,
    init: DualState<T>,
    schedule: Schedule<T>,
    max_iters: usize,
    tol: T,
) -> Result<PrimalDualOutcome<T>>
where
    F: FnMut(ArrayView1<'_, T>, ArrayView1<'_, T>) -> ObjectiveEval<T>,
{
    primal_dual_solve_with(
        objective,
        theta,
        init,
        schedule,
        max_iters,
        tol,
        &PrimalDualOptions::default(),
    )
}

/// Alternating projected primal descent on `(theta, alpha)` and dual ascent on
/// the multipliers.
///
/// Converged means `|sum(alpha) - 1| <= tol` and the largest primal change of
/// the last iteration is at most `tol`.
pub fn primal_dual_solve_with<T: Real, F>(
    mut objective: F,
    theta: Array1<T>,
    init: DualState<T>,
    mut schedule: Schedule<T>,
    max_iters: usize,
    tol: T,
    options: &PrimalDualOptions<T>,
) -> Result<PrimalDualOutcome<T>>
where
    F: FnMut(ArrayView1<'_, T>, ArrayView1<'_, T>) -> ObjectiveEval<T>,
{
    let DualState {
        mut lambda,
        mut alpha,
    } = DualState::new(init.lambda, init.alpha)?;
    let mut theta = theta;
    let c = alpha.len();
    let inv_c = T::one() / T::from_count(c);
    let rho = options.augmentation;
    let constraint = |alpha: &Array1<T>| -> Array1<T> {
        match options.form {
            ConstraintForm::Simplex => Array1::from_elem(c, alpha.sum() - T::one()),
            ConstraintForm::PerClass => alpha.mapv(|a| a - inv_c),
        }
    };
    if options.form == ConstraintForm::Simplex {
        let shared = lambda.mean().unwrap_or_else(T::zero);
        lambda.fill(shared);
    }

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for t in 0..max_iters {
        let eval = objective(theta.view(), alpha.view());
        let finite = eval.value.is_finite()
            && eval
                .grad_theta
                .iter()
                .chain(eval.grad_alpha.iter())
                .all(|g| g.is_finite());
        if !finite {
            return Err(Error::NonFiniteObjective { iteration: t });
        }
        if eval.grad_theta.len() != theta.len() {
            return Err(Error::dims(
                "objective theta gradient",
                theta.len(),
                eval.grad_theta.len(),
            ));
        }
        if eval.grad_alpha.len() != c {
            return Err(Error::dims(
                "objective alpha gradient",
                c,
                eval.grad_alpha.len(),
            ));
        }
        let eta = schedule.eta();
        let eta_dual = options.dual_step.unwrap_or(eta);

        theta.scaled_add(-eta, &eval.grad_theta);
        let h = constraint(&alpha);
        let next_alpha: Array1<T> = alpha
            .iter()
            .zip(eval.grad_alpha.iter())
            .zip(lambda.iter().zip(h.iter()))
            .map(|((&a, &g), (&l, &hc))| (a - eta * (g + l + rho * hc)).max(T::zero()))
            .collect();
        let theta_move = eval
            .grad_theta
            .iter()
            .fold(T::zero(), |m, g| m.max((eta * *g).abs()));
        let alpha_move = next_alpha
            .iter()
            .zip(alpha.iter())
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        alpha = next_alpha;
        let h = constraint(&alpha);
        lambda.scaled_add(eta_dual, &h);

        let residual = (alpha.sum() - T::one()).abs();
        trace.push(PrimalDualRecord {
            t,
            objective: eval.value,
            residual,
        });
        schedule = schedule.advanced();
        iterations = t + 1;
        if residual <= tol && theta_move.max(alpha_move) <= tol {
            converged = true;
            break;
        }
    }
    Ok(PrimalDualOutcome {
        theta,
        state: DualState { lambda, alpha },
        iterations,
        converged,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
        let v = Array1::from_shape_fn(d, |_| rng.random_range(-1.0..1.0));
        let n = l2_norm(v.view());
        v / n
    }

    #[test]
    fn sgd_examples() {
        let s = Schedule::constant(0.5).unwrap();
        let p = ParameterVector::euclidean(array![1.0, 1.0]).unwrap();
        let (q, s2) = sgd_step(&p, array![1.0, 0.0].view(), &s).unwrap();
        assert_eq!(q.theta(), &array![0.5, 1.0]);
        assert_eq!(s2.t(), 1);
        let (r, _) = sgd_step(&p, array![0.0, 0.0].view(), &s).unwrap();
        assert_eq!(r, p);
    }

    #[test]
    fn sgd_contracts_quadratic_bowl() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p: ParameterVector<f64> =
            ParameterVector::euclidean(Array1::from_shape_fn(4, |_| rng.random_range(-5.0..5.0)))
                .unwrap();
        let mut s = Schedule::constant(0.1).unwrap();
        for _ in 0..100 {
            let before = p.norm();
            let g = p.theta().clone();
            (p, s) = sgd_step(&p, g.view(), &s).unwrap();
            assert!((p.norm() / before - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn manifold_checks() {
        let e = ParameterVector::euclidean(array![1.0, 0.0]).unwrap();
        let sph = ParameterVector::on_sphere(array![3.0, 4.0]).unwrap();
        let s = Schedule::constant(0.1).unwrap();
        let g = array![0.0, 1.0];
        assert!(matches!(
            rsgd_step(&e, g.view(), &s),
            Err(Error::ManifoldMismatch { .. })
        ));
        assert!(matches!(
            sgd_step(&sph, g.view(), &s),
            Err(Error::ManifoldMismatch { .. })
        ));
        assert!(matches!(
            prox_gradient_step(&sph, g.view(), &s, 0.1),
            Err(Error::ManifoldMismatch { .. })
        ));
        assert!(ParameterVector::new(array![1.0, 1.0], Manifold::UnitSphere).is_err());
        assert!(matches!(
            ParameterVector::on_sphere(array![0.0, 0.0]),
            Err(Error::ZeroNormAfterStep)
        ));
        assert!(sgd_step(&e, array![1.0].view(), &s).is_err());
    }

    #[test]
    fn schedule_decay() {
        let s = Schedule::new(1.0, Decay::InverseT).unwrap();
        assert_eq!(s.eta(), 1.0);
        assert_eq!(s.advanced().advanced().eta(), 1.0 / 3.0);
        assert!(Schedule::constant(0.0).is_err());
        assert!(Schedule::constant(f64::NAN).is_err());
    }

    #[test]
    fn rsgd_examples() {
        let s = Schedule::constant(1.0).unwrap();
        let p = ParameterVector::new(array![1.0, 0.0], Manifold::UnitSphere).unwrap();
        let (q, _) = rsgd_step(&p, array![0.0, 1.0].view(), &s).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q.theta()[0] - h).abs() < 1e-15 && (q.theta()[1] + h).abs() < 1e-15);
        let (r, _) = rsgd_step(&p, array![-3.0, 0.0].view(), &s).unwrap();
        assert_eq!(r.theta(), p.theta());
    }

    #[test]
    fn rsgd_stays_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ParameterVector::on_sphere(random_unit(&mut rng, 6)).unwrap();
        let mut s = Schedule::new(0.5, Decay::InverseT).unwrap();
        for _ in 0..10_000 {
            let g = Array1::from_shape_fn(6, |_| rng.random_range(-3.0..3.0));
            (p, s) = rsgd_step(&p, g.view(), &s).unwrap();
            assert!((p.norm() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn rsgd_maximizes_linear_functional() {
        let v = array![1.0, -2.0, 0.5, 3.0];
        let target = &v / l2_norm(v.view());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = ParameterVector::on_sphere(random_unit(&mut rng, 4)).unwrap();
        let mut s = Schedule::constant(0.1).unwrap();
        let neg_v = -&v;
        for _ in 0..1000 {
            (p, s) = rsgd_step(&p, neg_v.view(), &s).unwrap();
        }
        let err = (p.theta() - &target)
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn soft_threshold_examples() {
        let t = array![0.3, -2.0];
        assert_eq!(prox_soft_threshold(t.view(), 1.0, 0.0), t);
        assert_eq!(prox_soft_threshold(t.view(), 1.0, 0.5), array![0.0, -1.5]);
        assert_eq!(prox_soft_threshold(t.view(), 2.0, 1.5), array![0.0, 0.0]);
    }

    #[test]
    fn soft_threshold_matches_grid_argmin() {
        // argmin_x (x - v)^2 / (2 step) + reg |x| per coordinate, by brute force.
        let (step, reg) = (1.0, 0.5);
        for &v in &[0.3, -2.0] {
            let mut best = (f64::INFINITY, 0.0);
            for k in -40_000..=40_000 {
                let x = k as f64 * 1e-4;
                let obj = (x - v) * (x - v) / (2.0 * step) + reg * x.abs();
                if obj < best.0 {
                    best = (obj, x);
                }
            }
            let got = prox_soft_threshold(array![v].view(), step, reg)[0];
            assert!((got - best.1).abs() <= 1e-4);
        }
    }

    #[test]
    fn prox_step_without_penalty_is_sgd() {
        let p = ParameterVector::euclidean(array![0.2, -1.0, 3.0]).unwrap();
        let g = array![1.0, 0.5, -0.25];
        let s = Schedule::constant(0.3).unwrap();
        assert_eq!(
            prox_gradient_step(&p, g.view(), &s, 0.0).unwrap(),
            sgd_step(&p, g.view(), &s).unwrap()
        );
    }

    #[test]
    fn pure_shrinkage_is_monotone() {
        let mut p = ParameterVector::euclidean(array![2.0, -3.0, 0.5]).unwrap();
        let mut s = Schedule::constant(0.1).unwrap();
        let zero = Array1::zeros(3);
        let l1 = |p: &ParameterVector<f64>| p.theta().iter().map(|v| v.abs()).sum::<f64>();
        for _ in 0..50 {
            let before = l1(&p);
            (p, s) = prox_gradient_step(&p, zero.view(), &s, 2.0).unwrap();
            assert!(l1(&p) <= before);
        }
        assert_eq!(l1(&p), 0.0);
    }

    fn constant_objective(
        _: ArrayView1<'_, f64>,
        alpha: ArrayView1<'_, f64>,
    ) -> ObjectiveEval<f64> {
        ObjectiveEval {
            value: 1.0,
            grad_theta: Array1::zeros(0),
            grad_alpha: Array1::zeros(alpha.len()),
        }
    }

    #[test]
    fn single_class_weight_pinned_to_one() {
        let init = DualState::new(array![0.0], array![0.2]).unwrap();
        let out = primal_dual_solve(
            constant_objective,
            Array1::zeros(0),
            init,
            Schedule::constant(0.2).unwrap(),
            5000,
            1e-14,
        )
        .unwrap();
        assert!((out.state.alpha[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn per_class_constraints_give_uniform_weights() {
        let init = DualState::new(Array1::zeros(4), array![0.9, 0.0, 0.3, 0.05]).unwrap();
        let opts = PrimalDualOptions {
            form: ConstraintForm::PerClass,
            ..Default::default()
        };
        let out = primal_dual_solve_with(
            constant_objective,
            Array1::zeros(0),
            init,
            Schedule::constant(0.2).unwrap(),
            5000,
            1e-13,
            &opts,
        )
        .unwrap();
        assert!(out.converged);
        for a in out.state.alpha.iter() {
            assert!((a - 0.25).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let bad = |_: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>| ObjectiveEval {
            value: if a[0] < 0.45 { f64::NAN } else { 0.0 },
            grad_theta: Array1::zeros(0),
            grad_alpha: array![1.0, 0.0],
        };
        let err = primal_dual_solve(
            bad,
            Array1::zeros(0),
            DualState::uniform(2),
            Schedule::constant(0.1).unwrap(),
            100,
            1e-9,
        );
        assert!(matches!(
            err,
            Err(Error::NonFiniteObjective { iteration: 1 })
        ));
    }

    #[test]
    fn unconverged_run_is_flagged() {
        let init = DualState::new(array![0.0, 0.0], array![2.0, 2.0]).unwrap();
        let out = primal_dual_solve(
            constant_objective,
            Array1::zeros(0),
            init,
            Schedule::constant(0.01).unwrap(),
            3,
            1e-9,
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn prox_beats_random_candidates(
            seed in 0u64..10_000,
            step in 0.05f64..3.0,
            reg in 0.0f64..2.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let theta = Array1::from_shape_fn(d, |_| rng.random_range(-3.0..3.0));
            let obj = |x: &[f64]| {
                x.iter()
                    .zip(theta.iter())
                    .map(|(a, t)| (a - t) * (a - t) / (2.0 * step) + reg * a.abs())
                    .sum::<f64>()
            };
            let prox = prox_soft_threshold(theta.view(), step, reg);
            let best = obj(prox.as_slice().unwrap());
            let mut cand = [0.0; 3];
            for _ in 0..1_000_000 {
                for (j, c) in cand.iter_mut().enumerate() {
                    *c = theta[j] + rng.random_range(-3.0..3.0);
                }
                prop_assert!(best <= obj(&cand) + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn tangent_projection_is_orthogonal(
            seed in 0u64..10_000,
            d in 2usize..10,
            scale in 0.01f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let theta = random_unit(&mut rng, d);
            let g = Array1::from_shape_fn(d, |_| rng.random_range(-scale..scale));
            let r = riemannian_gradient(theta.view(), g.view());
            prop_assert!(r.dot(&theta).abs() <= 1e-12);
        }

        #[test]
        fn sgd_descends_on_convex_quadratic(
            seed in 0u64..10_000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = Array1::from_shape_fn(4, |_| rng.random_range(0.1..4.0));
            let f = |x: &Array1<f64>| 0.5 * (x * x * &h).sum();
            let mut p = ParameterVector::euclidean(Array1::from_shape_fn(4, |_| rng.random_range(-2.0..2.0))).unwrap();
            let mut s = Schedule::constant(0.2).unwrap();
            for _ in 0..50 {
                let before = f(p.theta());
                let g = p.theta() * &h;
                (p, s) = sgd_step(&p, g.view(), &s).unwrap();
                prop_assert!(f(p.theta()) <= before);
            }
        }
    }
}
