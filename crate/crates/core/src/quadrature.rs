//! Gauss–Legendre quadrature with panel doubling.
//!
//! Integrands in this crate are piecewise smooth with known breakpoints
//! (kernel pieces, convolution knots, jumps of one-sided kernels). Panels are
//! always split at those breakpoints; the number of panels per interval is
//! doubled until two successive estimates agree.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nodes and weights of an `n`-point Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre<T> {
    nodes: Vec<T>,
    weights: Vec<T>,
}

impl<T: Scalar> GaussLegendre<T> {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let nf = n as f64;
        for i in 1..=n {
            // Tricomi initial guess, refined by Newton on P_n.
            let mut x = ((i as f64 - 0.25) / (nf + 0.5) * std::f64::consts::PI).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            nodes.push(T::lit(x));
            weights.push(T::lit(2.0 / ((1.0 - x * x) * dp * dp)));
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    /// Integral of `f` over `[a, b]` with a single panel.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F, a: T, b: T) -> T {
        let half = (b - a) * T::lit(0.5);
        let mid = (a + b) * T::lit(0.5);
        let mut acc = T::zero();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += *w * f(mid + half * *x);
        }
        acc * half
    }

    /// Integral over consecutive `breakpoints`, each interval split into
    /// `panels` equal panels.
    pub fn integrate_panels<F: Fn(T) -> T>(&self, f: &F, breakpoints: &[T], panels: usize) -> T {
        let mut acc = T::zero();
        let np = T::from_count(panels);
        for w in breakpoints.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let h = (b - a) / np;
            for k in 0..panels {
                let lo = a + h * T::from_count(k);
                let hi = if k + 1 == panels { b } else { lo + h };
                acc += self.integrate(f, lo, hi);
            }
        }
        acc
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Panel-doubling driver around a fixed Gauss–Legendre rule.
#[derive(Clone, Debug)]
pub struct AdaptiveQuadrature<T> {
    rule: GaussLegendre<T>,
    pub tolerance: T,
    pub max_doublings: usize,
}

impl<T: Scalar> AdaptiveQuadrature<T> {
    pub fn new(order: usize, tolerance: T) -> Self {
        Self { rule: GaussLegendre::new(order), tolerance, max_doublings: 12 }
    }

    pub fn rule(&self) -> &GaussLegendre<T> {
        &self.rule
    }

    /// Integrate `f` over the sorted `breakpoints`, doubling the panel count
    /// until successive estimates differ by less than
    /// `tolerance * max(1, |estimate|)`.
    pub fn integrate<F: Fn(T) -> T>(&self, f: F, breakpoints: &[T]) -> Result<T> {
        let mut panels = 1;
        let mut prev = self.rule.integrate_panels(&f, breakpoints, panels);
        for _ in 0..self.max_doublings {
            panels *= 2;
            let next = self.rule.integrate_panels(&f, breakpoints, panels);
            if !next.is_finite() {
                return Err(Error::Quadrature("non-finite integrand".into()));
            }
            if (next - prev).abs() <= self.tolerance * next.abs().max(T::one()) {
                return Ok(next);
            }
            prev = next;
        }
        Err(Error::Quadrature(format!(
            "no convergence after {} panel doublings (last estimate {})",
            self.max_doublings, prev
        )))
    }
}

/// Sort and deduplicate candidate breakpoints, clipped to `[lo, hi]`.
pub fn breakpoints_within<T: Scalar>(candidates: impl IntoIterator<Item = T>, lo: T, hi: T) -> Vec<T> {
    let mut pts: Vec<T> = candidates.into_iter().filter(|x| *x > lo && *x < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= T::epsilon() * (T::one() + b.abs()) * T::lit(4.0));
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let rule = GaussLegendre::<f64>::new(5);
        let v = rule.integrate(|x| x.powi(9) + x.powi(8), -1.0, 1.0);
        assert!((v - 2.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 7, 20, 40] {
            let rule = GaussLegendre::<f64>::new(n);
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn adaptive_handles_jump_at_breakpoint() {
        let q = AdaptiveQuadrature::new(10, 1e-12);
        let f = |x: f64| if x < 0.3 { x.exp() } else { 0.0 };
        let v = q.integrate(f, &[0.0, 0.3, 1.0]).unwrap();
        assert!((v - (0.3f64.exp() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn f32_rule_is_usable() {
        let rule = GaussLegendre::<f32>::new(8);
        let v = rule.integrate(|x| x * x, 0.0, 3.0);
        assert!((v - 9.0).abs() < 1e-4);
    }
}
