//! Dense univariate polynomials and compactly supported piecewise polynomials.
//!
//! Coefficients are generic over [`Coeff`], which is satisfied both by
//! floating point types and by [`Rational`] (arbitrary precision). Kernel
//! construction (one-sided restriction, equivalent kernels, self-convolution)
//! runs in [`Rational`] so that every derived kernel is exact; evaluation
//! happens on a [`LocalPiecewise`] converted to a [`Scalar`].

use std::cmp::Ordering;
use std::fmt::Debug;
use std::ops::Neg;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, ToPrimitive};

use crate::scalar::Scalar;

/// Exact rational coefficient type used for kernel algebra.
pub type Rational = BigRational;

/// Field-like coefficient type for polynomial arithmetic.
pub trait Coeff: Clone + PartialOrd + Num + Neg<Output = Self> + FromPrimitive + Debug {}

impl<F> Coeff for F where F: Clone + PartialOrd + Num + Neg<Output = F> + FromPrimitive + Debug {}

pub fn rational(num: i64, den: i64) -> Rational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact conversion of a finite float to a rational.
pub fn rational_from_f64(x: f64) -> Option<Rational> {
    BigRational::from_float(x)
}

pub fn rational_to_f64(x: &Rational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn binomial<F: Coeff>(n: usize, k: usize) -> F {
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    F::from_u128(c).expect("binomial coefficient representable")
}

/// Polynomial with coefficients in ascending order of degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<F> {
    coeffs: Vec<F>,
}

impl<F: Coeff> Poly<F> {
    pub fn new(mut coeffs: Vec<F>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        Self { coeffs }
    }

    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn constant(c: F) -> Self {
        Self::new(vec![c])
    }

    /// The identity polynomial `x`.
    pub fn x() -> Self {
        Self::new(vec![F::zero(), F::one()])
    }

    pub fn coeffs(&self) -> &[F] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree, with the zero polynomial reported as degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: &F) -> F {
        let mut acc = F::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x.clone() + c.clone();
        }
        acc
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let a = self.coeffs.get(i).cloned().unwrap_or_else(F::zero);
            let b = other.coeffs.get(i).cloned().unwrap_or_else(F::zero);
            out.push(a + b);
        }
        Self::new(out)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        Self::new(self.coeffs.iter().map(|c| -c.clone()).collect())
    }

    pub fn scale(&self, s: &F) -> Self {
        Self::new(self.coeffs.iter().map(|c| c.clone() * s.clone()).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut out = vec![F::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] = out[i + j].clone() + a.clone() * b.clone();
            }
        }
        Self::new(out)
    }

    pub fn derivative(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| c.clone() * F::from_usize(k).unwrap())
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Self {
        let mut out = Vec::with_capacity(self.coeffs.len() + 1);
        out.push(F::zero());
        for (k, c) in self.coeffs.iter().enumerate() {
            out.push(c.clone() / F::from_usize(k + 1).unwrap());
        }
        Self::new(out)
    }

    pub fn integrate(&self, a: &F, b: &F) -> F {
        let anti = self.antiderivative();
        anti.eval(b) - anti.eval(a)
    }

    /// `p(x + a)`.
    pub fn shift(&self, a: &F) -> Self {
        let lin = Self::new(vec![a.clone(), F::one()]);
        let mut acc = Self::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc.mul(&lin).add(&Self::constant(c.clone()));
        }
        acc
    }

    /// `p(-x)`.
    pub fn reflect(&self) -> Self {
        Self::new(
            self.coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| if k % 2 == 1 { -c.clone() } else { c.clone() })
                .collect(),
        )
    }

    /// `x^k p(x)`.
    pub fn mul_xk(&self, k: usize) -> Self {
        if self.is_zero() {
            return Self::zero();
        }
        let mut out = vec![F::zero(); k];
        out.extend(self.coeffs.iter().cloned());
        Self::new(out)
    }
}

/// One polynomial piece living on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Piece<F> {
    pub lo: F,
    pub hi: F,
    pub poly: Poly<F>,
}

/// Compactly supported piecewise polynomial; zero outside its pieces.
///
/// Pieces are sorted, non-overlapping and have `lo < hi`. Gaps between
/// pieces are allowed and evaluate to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise<F> {
    pieces: Vec<Piece<F>>,
}

fn cmp<F: PartialOrd>(a: &F, b: &F) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

impl<F: Coeff> Piecewise<F> {
    pub fn new(mut pieces: Vec<Piece<F>>) -> Self {
        pieces.retain(|p| p.lo < p.hi);
        pieces.sort_by(|a, b| cmp(&a.lo, &b.lo));
        Self { pieces }
    }

    pub fn single(lo: F, hi: F, poly: Poly<F>) -> Self {
        Self::new(vec![Piece { lo, hi, poly }])
    }

    pub fn pieces(&self) -> &[Piece<F>] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Smallest interval containing every piece.
    pub fn support(&self) -> Option<(F, F)> {
        let first = self.pieces.first()?;
        let last = self.pieces.last()?;
        Some((first.lo.clone(), last.hi.clone()))
    }

    /// Sorted, deduplicated piece endpoints.
    pub fn breakpoints(&self) -> Vec<F> {
        let mut pts: Vec<F> = self
            .pieces
            .iter()
            .flat_map(|p| [p.lo.clone(), p.hi.clone()])
            .collect();
        pts.sort_by(cmp);
        pts.dedup();
        pts
    }

    pub fn max_degree(&self) -> usize {
        self.pieces.iter().map(|p| p.poly.degree()).max().unwrap_or(0)
    }

    /// Value at `x`, taking the average of the one-sided limits at a breakpoint.
    pub fn eval(&self, x: &F) -> F {
        let two = F::one() + F::one();
        let mut left = None;
        let mut right = None;
        for p in &self.pieces {
            if &p.lo < x && x < &p.hi {
                return p.poly.eval(x);
            }
            if &p.hi == x {
                left = Some(p.poly.eval(x));
            }
            if &p.lo == x {
                right = Some(p.poly.eval(x));
            }
        }
        match (left, right) {
            (None, None) => F::zero(),
            (l, r) => (l.unwrap_or_else(F::zero) + r.unwrap_or_else(F::zero)) / two,
        }
    }

    pub fn map(&self, f: impl Fn(&Poly<F>) -> Poly<F>) -> Self {
        Self::new(
            self.pieces
                .iter()
                .map(|p| Piece { lo: p.lo.clone(), hi: p.hi.clone(), poly: f(&p.poly) })
                .collect(),
        )
    }

    pub fn scale(&self, s: &F) -> Self {
        self.map(|p| p.scale(s))
    }

    /// Pointwise product with a global polynomial.
    pub fn mul_poly(&self, q: &Poly<F>) -> Self {
        self.map(|p| p.mul(q))
    }

    pub fn derivative(&self) -> Self {
        self.map(Poly::derivative)
    }

    /// `f(-x)`.
    pub fn reflect(&self) -> Self {
        Self::new(
            self.pieces
                .iter()
                .map(|p| Piece { lo: -p.hi.clone(), hi: -p.lo.clone(), poly: p.poly.reflect() })
                .collect(),
        )
    }

    /// Restriction to `[lo, hi]`.
    pub fn restrict(&self, lo: &F, hi: &F) -> Self {
        Self::new(
            self.pieces
                .iter()
                .filter_map(|p| {
                    let a = if &p.lo > lo { p.lo.clone() } else { lo.clone() };
                    let b = if &p.hi < hi { p.hi.clone() } else { hi.clone() };
                    (a < b).then(|| Piece { lo: a, hi: b, poly: p.poly.clone() })
                })
                .collect(),
        )
    }

    /// Integral of `x^k f(x)` over the whole support.
    pub fn moment(&self, k: usize) -> F {
        self.pieces
            .iter()
            .fold(F::zero(), |acc, p| acc + p.poly.mul_xk(k).integrate(&p.lo, &p.hi))
    }

    pub fn integral(&self) -> F {
        self.moment(0)
    }

    /// Integral of `f(x)^2`.
    pub fn roughness(&self) -> F {
        self.pieces
            .iter()
            .fold(F::zero(), |acc, p| acc + p.poly.mul(&p.poly).integrate(&p.lo, &p.hi))
    }

    fn piece_at_midpoint(&self, lo: &F, hi: &F) -> Option<&Poly<F>> {
        let two = F::one() + F::one();
        let mid = (lo.clone() + hi.clone()) / two;
        self.pieces.iter().find(|p| p.lo <= mid && mid <= p.hi).map(|p| &p.poly)
    }

    /// Combine two piecewise functions on the union of their breakpoints.
    pub fn combine(&self, other: &Self, f: impl Fn(&Poly<F>, &Poly<F>) -> Poly<F>) -> Self {
        let mut pts = self.breakpoints();
        pts.extend(other.breakpoints());
        pts.sort_by(cmp);
        pts.dedup();
        let zero = Poly::zero();
        let mut out = Vec::new();
        for w in pts.windows(2) {
            let a = self.piece_at_midpoint(&w[0], &w[1]);
            let b = other.piece_at_midpoint(&w[0], &w[1]);
            if a.is_none() && b.is_none() {
                continue;
            }
            let poly = f(a.unwrap_or(&zero), b.unwrap_or(&zero));
            out.push(Piece { lo: w[0].clone(), hi: w[1].clone(), poly });
        }
        Self::new(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a.sub(b))
    }

    /// Structural equality after refinement to common breakpoints.
    pub fn same_function(&self, other: &Self) -> bool {
        let diff = self.sub(other);
        diff.pieces.iter().all(|p| p.poly.is_zero())
    }

    /// Exact convolution `(f * g)(x) = ∫ f(y) g(x - y) dy`.
    pub fn convolve(&self, other: &Self) -> Self {
        let two = F::one() + F::one();
        let mut pts = Vec::new();
        for p in &self.pieces {
            for q in &other.pieces {
                for a in [&p.lo, &p.hi] {
                    for c in [&q.lo, &q.hi] {
                        pts.push(a.clone() + c.clone());
                    }
                }
            }
        }
        pts.sort_by(cmp);
        pts.dedup();

        // Per pair, cache the y-expansion of q(x - y) and antiderivatives of y^l p(y).
        struct PairTerms<F> {
            a_l: Vec<Poly<F>>,
            i_l: Vec<Poly<F>>,
        }
        let mut pair_terms: Vec<Vec<PairTerms<F>>> = Vec::with_capacity(self.pieces.len());
        for p in &self.pieces {
            let mut row = Vec::with_capacity(other.pieces.len());
            for q in &other.pieces {
                let qc = q.poly.coeffs();
                let deg_q = qc.len();
                let mut a_l = Vec::with_capacity(deg_q);
                let mut i_l = Vec::with_capacity(deg_q);
                for l in 0..deg_q {
                    let sign = if l % 2 == 0 { F::one() } else { -F::one() };
                    let coeffs: Vec<F> = (l..deg_q)
                        .map(|k| qc[k].clone() * binomial::<F>(k, l) * sign.clone())
                        .collect();
                    a_l.push(Poly::new(coeffs));
                    i_l.push(p.poly.mul_xk(l).antiderivative());
                }
                row.push(PairTerms { a_l, i_l });
            }
            pair_terms.push(row);
        }

        let mut out = Vec::new();
        for w in pts.windows(2) {
            let xm = (w[0].clone() + w[1].clone()) / two.clone();
            let mut acc = Poly::zero();
            for (pi, p) in self.pieces.iter().enumerate() {
                for (qi, q) in other.pieces.iter().enumerate() {
                    // y ranges over [max(p.lo, x - q.hi), min(p.hi, x - q.lo)]
                    let lower_var = xm.clone() - q.hi.clone() > p.lo;
                    let upper_var = xm.clone() - q.lo.clone() < p.hi;
                    let lo_m = if lower_var { xm.clone() - q.hi.clone() } else { p.lo.clone() };
                    let hi_m = if upper_var { xm.clone() - q.lo.clone() } else { p.hi.clone() };
                    if hi_m <= lo_m {
                        continue;
                    }
                    let terms = &pair_terms[pi][qi];
                    for (a_l, i_l) in terms.a_l.iter().zip(&terms.i_l) {
                        if a_l.is_zero() {
                            continue;
                        }
                        let upper = if upper_var {
                            i_l.shift(&(-q.lo.clone()))
                        } else {
                            Poly::constant(i_l.eval(&p.hi))
                        };
                        let lower = if lower_var {
                            i_l.shift(&(-q.hi.clone()))
                        } else {
                            Poly::constant(i_l.eval(&p.lo))
                        };
                        acc = acc.add(&a_l.mul(&upper.sub(&lower)));
                    }
                }
            }
            if !acc.is_zero() {
                out.push(Piece { lo: w[0].clone(), hi: w[1].clone(), poly: acc });
            }
        }
        Self::new(out)
    }
}

impl Piecewise<Rational> {
    /// Convert to a fast floating point representation.
    pub fn to_local<T: Scalar>(&self) -> LocalPiecewise<T> {
        LocalPiecewise::from_rational(self)
    }
}

/// A polynomial piece re-expanded around its midpoint for accurate
/// floating point evaluation.
#[derive(Clone, Debug)]
pub struct LocalPiece<T> {
    pub lo: T,
    pub hi: T,
    center: T,
    coeffs: Vec<T>,
    dcoeffs: Vec<T>,
}

impl<T: Scalar> LocalPiece<T> {
    fn horner(c: &[T], s: T) -> T {
        c.iter().rev().fold(T::zero(), |acc, &k| acc * s + k)
    }

    #[inline]
    pub fn value(&self, x: T) -> T {
        Self::horner(&self.coeffs, x - self.center)
    }

    #[inline]
    pub fn slope(&self, x: T) -> T {
        Self::horner(&self.dcoeffs, x - self.center)
    }
}

/// Floating point view of a piecewise polynomial.
#[derive(Clone, Debug)]
pub struct LocalPiecewise<T> {
    pieces: Vec<LocalPiece<T>>,
}

impl<T: Scalar> LocalPiecewise<T> {
    pub fn from_rational(pw: &Piecewise<Rational>) -> Self {
        let two = rational(2, 1);
        let pieces = pw
            .pieces()
            .iter()
            .map(|p| {
                let center = (p.lo.clone() + p.hi.clone()) / two.clone();
                let local = p.poly.shift(&center);
                let dlocal = local.derivative();
                let conv = |q: &Poly<Rational>| -> Vec<T> {
                    q.coeffs().iter().map(|c| T::lit(rational_to_f64(c))).collect()
                };
                LocalPiece {
                    lo: T::lit(rational_to_f64(&p.lo)),
                    hi: T::lit(rational_to_f64(&p.hi)),
                    center: T::lit(rational_to_f64(&center)),
                    coeffs: conv(&local),
                    dcoeffs: conv(&dlocal),
                }
            })
            .collect();
        Self { pieces }
    }

    pub fn pieces(&self) -> &[LocalPiece<T>] {
        &self.pieces
    }

    pub fn support(&self) -> (T, T) {
        match (self.pieces.first(), self.pieces.last()) {
            (Some(a), Some(b)) => (a.lo, b.hi),
            _ => (T::zero(), T::zero()),
        }
    }

    pub fn breakpoints(&self) -> Vec<T> {
        let mut pts: Vec<T> = self.pieces.iter().flat_map(|p| [p.lo, p.hi]).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        pts.dedup();
        pts
    }

    fn eval_with(&self, x: T, f: impl Fn(&LocalPiece<T>, T) -> T) -> T {
        // Binary search on piece lower bounds.
        let idx = self.pieces.partition_point(|p| p.lo < x);
        // Candidate pieces: idx - 1 (lo < x) and idx (lo >= x).
        if idx > 0 {
            let p = &self.pieces[idx - 1];
            if x < p.hi {
                return f(p, x);
            }
        }
        let left = if idx > 0 && self.pieces[idx - 1].hi == x {
            Some(f(&self.pieces[idx - 1], x))
        } else {
            None
        };
        let right = if idx < self.pieces.len() && self.pieces[idx].lo == x {
            Some(f(&self.pieces[idx], x))
        } else {
            None
        };
        match (left, right) {
            (None, None) => T::zero(),
            (l, r) => (l.unwrap_or_else(T::zero) + r.unwrap_or_else(T::zero)) * T::lit(0.5),
        }
    }

    /// Value at `x`; the average of one-sided limits at a breakpoint.
    #[inline]
    pub fn value(&self, x: T) -> T {
        self.eval_with(x, |p, x| p.value(x))
    }

    /// First derivative at `x`, with the same breakpoint convention.
    #[inline]
    pub fn slope(&self, x: T) -> T {
        self.eval_with(x, |p, x| p.slope(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational {
        rational(n, d)
    }

    fn epan() -> Piecewise<Rational> {
        Piecewise::single(r(-1, 1), r(1, 1), Poly::new(vec![r(3, 4), r(0, 1), r(-3, 4)]))
    }

    #[test]
    fn shift_and_reflect() {
        let p = Poly::new(vec![1.0f64, 2.0, 3.0]);
        let s = p.shift(&1.0);
        for x in [-1.0f64, 0.0, 0.5, 2.0] {
            assert!((s.eval(&x) - p.eval(&(x + 1.0))).abs() < 1e-12);
            assert!((p.reflect().eval(&x) - p.eval(&-x)).abs() < 1e-12);
        }
    }

    #[test]
    fn epanechnikov_moments_exact() {
        let k = epan();
        assert_eq!(k.integral(), r(1, 1));
        assert_eq!(k.moment(1), r(0, 1));
        assert_eq!(k.moment(2), r(1, 5));
        assert_eq!(k.roughness(), r(3, 5));
    }

    #[test]
    fn convolution_of_uniforms_is_triangle() {
        let u = Piecewise::single(r(-1, 2), r(1, 2), Poly::constant(r(1, 1)));
        let t = u.convolve(&u);
        assert_eq!(t.support(), Some((r(-1, 1), r(1, 1))));
        assert_eq!(t.eval(&r(0, 1)), r(1, 1));
        assert_eq!(t.eval(&r(1, 2)), r(1, 2));
        assert_eq!(t.eval(&r(-3, 4)), r(1, 4));
        assert_eq!(t.integral(), r(1, 1));
    }

    #[test]
    fn self_convolution_at_zero_is_roughness() {
        let k = epan();
        let kk = k.convolve(&k);
        assert_eq!(kk.eval(&r(0, 1)), k.roughness());
        assert_eq!(kk.integral(), r(1, 1));
    }

    #[test]
    fn breakpoint_average() {
        let half = Piecewise::single(r(-1, 1), r(0, 1), Poly::constant(r(2, 1)));
        assert_eq!(half.eval(&r(0, 1)), r(1, 1));
        let local: LocalPiecewise<f64> = half.to_local();
        assert_eq!(local.value(0.0), 1.0);
        assert_eq!(local.value(-0.5), 2.0);
        assert_eq!(local.value(0.5), 0.0);
    }

    #[test]
    fn local_matches_exact() {
        let k = epan().convolve(&epan());
        let local: LocalPiecewise<f64> = k.to_local();
        for i in 0..=40 {
            let x = -2.0 + 0.1 * i as f64;
            let exact = rational_to_f64(&k.eval(&rational_from_f64(x).unwrap()));
            assert!((local.value(x) - exact).abs() < 1e-14, "x = {x}");
        }
    }
}
