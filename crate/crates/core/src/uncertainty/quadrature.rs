//! Expectations under a normal distribution.
//!
//! [`GaussHermite`] is exact for polynomials and converges fast for smooth
//! integrands. Integrands with kinks (a clamped probability) or a logarithm
//! close to the integration range need [`PiecewiseGaussian`], which splits the
//! real line at known breakpoints and runs graded Gauss-Legendre panels on
//! each piece.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use crate::scalar::Real;

/// Gauss-Hermite rule for `E[f(X)]`, `X ~ N(mu, sigma^2)`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pairs: Vec<(f64, f64)>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        let order = NonZeroUsize::new(order).expect("quadrature order must be positive");
        let rule = gauss_quad::hermite::GaussHermite::new(order);
        let pairs = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x, w / std::f64::consts::PI.sqrt()))
            .collect();
        Self { pairs }
    }

    pub fn order(&self) -> usize {
        self.pairs.len()
    }

    pub fn expect<T: Real>(&self, mu: T, sigma: T, mut f: impl FnMut(T) -> T) -> T {
        let root2 = T::lit(std::f64::consts::SQRT_2);
        self.pairs.iter().fold(T::zero(), |acc, &(x, w)| {
            acc + T::lit(w) * f(mu + root2 * sigma * T::lit(x))
        })
    }
}

/// Composite Gauss-Legendre quadrature against the normal density, split at
/// breakpoints and geometrically graded toward each of them.
#[derive(Clone, Debug)]
pub struct PiecewiseGaussian {
    /// Nodes and weights on `[-1, 1]`.
    legendre: Vec<(f64, f64)>,
}

/// Half-width of the standardized integration range; the neglected tail mass is below 1e-32.
const Z_SPAN: f64 = 12.0;
const MAX_PANEL_WIDTH: f64 = 1.0;
const GRADING_RATIO: f64 = 0.2;
const GRADING_LEVELS: i32 = 22;

impl PiecewiseGaussian {
    pub fn new(points_per_panel: usize) -> Self {
        let n = NonZeroUsize::new(points_per_panel).expect("quadrature order must be positive");
        let rule = gauss_quad::legendre::GaussLegendre::new(n);
        Self {
            legendre: rule.as_node_weight_pairs().to_vec(),
        }
    }

    /// Shared 20-point instance.
    pub fn standard() -> &'static Self {
        static RULE: OnceLock<PiecewiseGaussian> = OnceLock::new();
        RULE.get_or_init(|| PiecewiseGaussian::new(20))
    }

    pub fn points_per_panel(&self) -> usize {
        self.legendre.len()
    }

    /// `E[f(X)]` for `X ~ N(mu, sigma^2)`; `f` may be non-smooth at `breakpoints`.
    ///
    /// `sigma == 0` evaluates `f(mu)`.
    pub fn expect<T: Real>(
        &self,
        mu: T,
        sigma: T,
        breakpoints: &[T],
        mut f: impl FnMut(T) -> T,
    ) -> T {
        if sigma == T::zero() {
            return f(mu);
        }
        let span = T::lit(Z_SPAN);
        let mut cuts: Vec<T> = breakpoints
            .iter()
            .map(|&b| (b - mu) / sigma)
            .filter(|z| z.abs() < span)
            .collect();
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breakpoints"));
        cuts.dedup();

        let mut edges = Vec::with_capacity(cuts.len() + 2);
        edges.push((-span, false));
        edges.extend(cuts.into_iter().map(|z| (z, true)));
        edges.push((span, false));

        let norm = T::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
        let half = T::lit(0.5);
        let mut total = T::zero();
        let mut integrate_panel = |lo: T, hi: T, total: &mut T| {
            let mid = (lo + hi) * half;
            let rad = (hi - lo) * half;
            for &(x, w) in &self.legendre {
                let z = mid + rad * T::lit(x);
                *total =
                    *total + T::lit(w) * rad * f(mu + sigma * z) * (-(z * z) * half).exp() * norm;
            }
        };
        for pair in edges.windows(2) {
            let ((lo, grade_lo), (hi, grade_hi)) = (pair[0], pair[1]);
            for (a, b) in panels(lo, hi, grade_lo, grade_hi) {
                integrate_panel(a, b, &mut total);
            }
        }
        total
    }
}

/// Panel edges on `[lo, hi]`: uniform panels of bounded width, with the end
/// panels next to a graded edge split geometrically toward it.
fn panels<T: Real>(lo: T, hi: T, grade_lo: bool, grade_hi: bool) -> Vec<(T, T)> {
    let width = hi - lo;
    let count = (width / T::lit(MAX_PANEL_WIDTH))
        .ceil()
        .to_usize()
        .unwrap_or(1)
        .max(1);
    let step = width / T::from_count(count);
    let mut uniform: Vec<(T, T)> = (0..count)
        .map(|k| {
            let a = lo + step * T::from_count(k);
            let b = if k + 1 == count {
                hi
            } else {
                lo + step * T::from_count(k + 1)
            };
            (a, b)
        })
        .collect();
    let graded = |anchor: T, w: T, toward_lo: bool| -> Vec<(T, T)> {
        // offsets w*r^L, ..., w*r, w measured from the anchor
        let mut offsets: Vec<T> = (0..=GRADING_LEVELS)
            .rev()
            .map(|k| w * T::lit(GRADING_RATIO).powi(k))
            .collect();
        offsets.insert(0, T::zero());
        offsets
            .windows(2)
            .map(|o| {
                if toward_lo {
                    (anchor + o[0], anchor + o[1])
                } else {
                    (anchor - o[1], anchor - o[0])
                }
            })
            .collect()
    };
    if grade_hi {
        let (a, b) = uniform.pop().expect("at least one panel");
        let mut g = graded(b, b - a, false);
        g.reverse();
        uniform.extend(g);
    }
    if grade_lo {
        let (a, b) = uniform.remove(0);
        let mut g = graded(a, b - a, true);
        g.extend(uniform);
        uniform = g;
    }
    uniform
}
