//! Rescaling factors between one-sided and two-sided bandwidths, and the
//! asymptotic variance factors `Ψ` of the bandwidth selectors.
//!
//! All kernel algebra is exact (rational piecewise polynomials); only the
//! final squared integrals involving the irrational `ρ` use quadrature.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{BuiltinKernel, Kernel, Side};
use crate::poly::{rational_to_f64, LocalPiecewise, Piecewise, Poly, Rational};
use crate::quadrature::{breakpoints_within, AdaptiveQuadrature};
use crate::scalar::Scalar;

/// Local linear or multiplicatively bias corrected estimation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Ll,
    Mbc,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Ll => "ll",
            Estimator::Mbc => "mbc",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ll" => Ok(Estimator::Ll),
            "mbc" => Ok(Estimator::Mbc),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Selector whose asymptotic variance factor is requested.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PsiMethod {
    Bo,
    Do,
    Cv,
    Mise,
}

impl PsiMethod {
    pub const ALL: [PsiMethod; 4] = [PsiMethod::Bo, PsiMethod::Do, PsiMethod::Cv, PsiMethod::Mise];
}

impl fmt::Display for PsiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PsiMethod::Bo => "BO",
            PsiMethod::Do => "DO",
            PsiMethod::Cv => "CV",
            PsiMethod::Mise => "MISE",
        })
    }
}

const PSI_TOLERANCE: f64 = 1e-9;

fn mu2_and_roughness<T: Scalar>(k: &Kernel<T>) -> (Rational, Rational) {
    let m = k.exact_moments();
    (m.mu2, m.roughness)
}

fn require_symmetric<T: Scalar>(kernel: &Kernel<T>) -> Result<()> {
    if kernel.is_symmetric() {
        Ok(())
    } else {
        Err(Error::AsymmetricKernel(kernel.kind().to_string()))
    }
}

/// Equivalent local linear kernel of the one-sided version of `kernel`.
pub fn one_sided_equivalent<T: Scalar>(kernel: &Kernel<T>, side: Side) -> Result<Kernel<T>> {
    kernel.one_sided(side)?.equivalent_local_linear()
}

/// `ρ` for the local linear estimator built from the `side` one-sided kernel.
pub fn rho_ll_side<T: Scalar>(kernel: &Kernel<T>, side: Side) -> Result<T> {
    require_symmetric(kernel)?;
    let one = one_sided_equivalent(kernel, side)?;
    rho_ll_pair(kernel, &one)
}

/// `{R(K)/R(L) · μ2(L)²/μ2(K)²}^{1/5}` for a target `K` and one-sided `L`.
pub fn rho_ll_pair<T: Scalar>(kernel: &Kernel<T>, one_sided: &Kernel<T>) -> Result<T> {
    rho_ll_f64(kernel, one_sided).map(T::lit)
}

fn rho_ll_f64<T: Scalar>(kernel: &Kernel<T>, one_sided: &Kernel<T>) -> Result<f64> {
    let (mk, rk) = mu2_and_roughness(kernel);
    let (ml, rl) = mu2_and_roughness(one_sided);
    let ratio = rk / rl * (ml.clone() * ml) / (mk.clone() * mk);
    positive_root(&ratio, 5)
}

pub fn rho_ll<T: Scalar>(kernel: &Kernel<T>) -> Result<T> {
    rho_ll_side(kernel, Side::Left)
}

/// `ρ` for the bias corrected estimator built from the `side` one-sided kernel.
pub fn rho_mbc_side<T: Scalar>(kernel: &Kernel<T>, side: Side) -> Result<T> {
    require_symmetric(kernel)?;
    let one = one_sided_equivalent(kernel, side)?;
    rho_mbc_pair(kernel, &one)
}

/// `{R(Γ_K)/R(Γ_L) · μ2(L)⁴/μ2(K)⁴}^{1/9}`.
pub fn rho_mbc_pair<T: Scalar>(kernel: &Kernel<T>, one_sided: &Kernel<T>) -> Result<T> {
    rho_mbc_f64(kernel, one_sided).map(T::lit)
}

fn rho_mbc_f64<T: Scalar>(kernel: &Kernel<T>, one_sided: &Kernel<T>) -> Result<f64> {
    let (mk, _) = mu2_and_roughness(kernel);
    let (ml, _) = mu2_and_roughness(one_sided);
    let rgk = kernel.twicing()?.exact().roughness();
    let rgl = one_sided.twicing()?.exact().roughness();
    let m2 = |x: Rational| {
        let sq = x.clone() * x;
        sq.clone() * sq
    };
    let ratio = rgk / rgl * m2(ml) / m2(mk);
    positive_root(&ratio, 9)
}

pub fn rho_mbc<T: Scalar>(kernel: &Kernel<T>) -> Result<T> {
    rho_mbc_side(kernel, Side::Left)
}

/// The `ρ` matching an estimator.
pub fn rho<T: Scalar>(kernel: &Kernel<T>, estimator: Estimator) -> Result<T> {
    match estimator {
        Estimator::Ll => rho_ll(kernel),
        Estimator::Mbc => rho_mbc(kernel),
    }
}

fn positive_root(ratio: &Rational, k: i32) -> Result<f64> {
    let r = rational_to_f64(ratio);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::SingularKernel(r));
    }
    Ok(r.powf(1.0 / k as f64))
}

/// `L1(u) = -L(u) - u L'(u)`, exact.
fn l1(l: &Piecewise<Rational>) -> Piecewise<Rational> {
    l.map(|p| p.neg().sub(&p.derivative().mul(&Poly::x())))
}

/// `G(w) = L1(w) + L1(-w)`.
fn g_function(l: &Piecewise<Rational>) -> Piecewise<Rational> {
    let a = l1(l);
    a.add(&a.reflect())
}

/// `H(w) = ∫ L(u) {L1(u + w) + L1(u - w)} du`, computed as `C(w) + C(-w)`
/// with `C = L(-·) * L1`.
fn h_function(l: &Piecewise<Rational>) -> Piecewise<Rational> {
    let c = l.reflect().convolve(&l1(l));
    c.add(&c.reflect())
}

/// The functions entering `Ψ` for one estimator and kernel.
struct PsiParts {
    h_target: LocalPiecewise<f64>,
    g_target: LocalPiecewise<f64>,
    h_side: LocalPiecewise<f64>,
    g_side: LocalPiecewise<f64>,
    scale: f64,
    rho: f64,
    degree: usize,
}

impl PsiParts {
    fn new<T: Scalar>(kernel: &Kernel<T>, estimator: Estimator, side: Side) -> Result<Self> {
        require_symmetric(kernel)?;
        if !kernel.continuous_away_from_origin() {
            return Err(Error::DerivativeUnavailable(kernel.kind().to_string()));
        }
        let side = one_sided_equivalent(kernel, side)?;
        let (target, side_k, rho) = match estimator {
            Estimator::Ll => (kernel.clone(), side.clone(), rho_ll_f64(kernel, &side)?),
            Estimator::Mbc => (
                kernel.twicing()?,
                side.twicing()?,
                rho_mbc_f64(kernel, &side)?,
            ),
        };
        let scale = rational_to_f64(&(target.exact().roughness() / side_k.exact().roughness()));
        let ht = h_function(target.exact());
        let gt = g_function(target.exact());
        let hs = h_function(side_k.exact());
        let gs = g_function(side_k.exact());
        let degree = [&ht, &gt, &hs, &gs].iter().map(|p| p.max_degree()).max().unwrap_or(0);
        Ok(Self {
            h_target: ht.to_local(),
            g_target: gt.to_local(),
            h_side: hs.to_local(),
            g_side: gs.to_local(),
            scale,
            rho,
            degree,
        })
    }

    fn integrate_square(&self, f: impl Fn(f64) -> f64, breakpoints: Vec<f64>) -> Result<f64> {
        let (lo, hi) = breakpoints.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if !lo.is_finite() {
            return Ok(0.0);
        }
        let pts = breakpoints_within(breakpoints.iter().copied(), lo, hi);
        let quad = AdaptiveQuadrature::new(self.degree + 2, PSI_TOLERANCE);
        quad.integrate(|u| f(u).powi(2), &pts)
    }

    fn psi(&self, method: PsiMethod) -> Result<f64> {
        match method {
            PsiMethod::Cv => self.integrate_square(|u| self.g_target.value(u), self.g_target.breakpoints()),
            PsiMethod::Mise => self.integrate_square(|u| self.h_target.value(u), self.h_target.breakpoints()),
            PsiMethod::Bo | PsiMethod::Do => {
                let mut pts = self.h_target.breakpoints();
                pts.push(0.0);
                for p in self.h_side.breakpoints().into_iter().chain(self.g_side.breakpoints()) {
                    pts.push(p / self.rho);
                }
                self.integrate_square(
                    |u| {
                        let v = self.rho * u;
                        self.scale * (self.h_side.value(v) - self.g_side.value(v)) - self.h_target.value(u)
                    },
                    pts,
                )
            }
        }
    }
}

/// Asymptotic variance factor `Ψ` of a selector for the given estimator.
///
/// BO is evaluated with the left one-sided kernel, DO as the mean of the
/// left and right evaluations.
pub fn psi_factor<T: Scalar>(method: PsiMethod, estimator: Estimator, kernel: &Kernel<T>) -> Result<T> {
    let parts = PsiParts::new(kernel, estimator, Side::Left)?;
    match method {
        PsiMethod::Do => {
            let right = PsiParts::new(kernel, estimator, Side::Right)?;
            Ok(T::lit(0.5 * (parts.psi(PsiMethod::Bo)? + right.psi(PsiMethod::Bo)?)))
        }
        m => parts.psi(m).map(T::lit),
    }
}

/// One kernel's row of the asymptotic variance table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiRow {
    pub kernel: String,
    pub estimator: Estimator,
    pub bo: f64,
    pub dox: f64,
    pub cv: f64,
    pub mise: f64,
    pub rho: f64,
}

impl PsiRow {
    pub fn get(&self, method: PsiMethod) -> f64 {
        match method {
            PsiMethod::Bo => self.bo,
            PsiMethod::Do => self.dox,
            PsiMethod::Cv => self.cv,
            PsiMethod::Mise => self.mise,
        }
    }
}

/// All four `Ψ` values and `ρ` for one kernel and estimator.
pub fn psi_row<T: Scalar>(kernel: &Kernel<T>, estimator: Estimator) -> Result<PsiRow> {
    let parts = PsiParts::new(kernel, estimator, Side::Left)?;
    let right = PsiParts::new(kernel, estimator, Side::Right)?;
    let bo = parts.psi(PsiMethod::Bo)?;
    Ok(PsiRow {
        kernel: kernel.to_string(),
        estimator,
        bo,
        dox: 0.5 * (bo + right.psi(PsiMethod::Bo)?),
        cv: parts.psi(PsiMethod::Cv)?,
        mise: parts.psi(PsiMethod::Mise)?,
        rho: parts.rho,
    })
}

/// Rows for the built-in kernels, local linear first, then bias corrected.
pub fn psi_table(kernels: &[BuiltinKernel]) -> Result<Vec<PsiRow>> {
    let cells: Vec<(Estimator, BuiltinKernel)> = [Estimator::Ll, Estimator::Mbc]
        .into_iter()
        .flat_map(|e| kernels.iter().map(move |&k| (e, k)))
        .collect();
    cells.into_par_iter().map(|(e, k)| psi_row(&Kernel::<f64>::builtin(k), e)).collect()
}

/// Write the table as CSV `estimator,kernel,rho,BO,DO,CV,MISE`.
pub fn write_psi_table<W: std::io::Write>(rows: &[PsiRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["estimator", "kernel", "rho", "BO", "DO", "CV", "MISE"])?;
    for r in rows {
        w.write_record([
            r.estimator.to_string(),
            r.kernel.clone(),
            format!("{:.6}", r.rho),
            format!("{:.4}", r.bo),
            format!("{:.4}", r.dox),
            format!("{:.4}", r.cv),
            format!("{:.4}", r.mise),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    type K = Kernel<f64>;

    #[test]
    fn rho_values() {
        let r: f64 = rho_ll(&K::epanechnikov()).unwrap();
        assert!((r - 0.537134).abs() < 1e-5, "{r}");
        let r: f64 = rho_mbc(&K::sextic()).unwrap();
        assert!((r - 0.650106).abs() < 1e-5, "{r}");
    }

    #[test]
    fn rho_side_invariance() {
        for k in [K::epanechnikov(), K::quartic(), K::sextic()] {
            let a: f64 = rho_ll_side(&k, Side::Left).unwrap();
            let b: f64 = rho_ll_side(&k, Side::Right).unwrap();
            assert_eq!(a, b);
            let a: f64 = rho_mbc_side(&k, Side::Left).unwrap();
            let b: f64 = rho_mbc_side(&k, Side::Right).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn identical_pair_gives_one() {
        let k = K::quartic();
        let a: f64 = rho_ll_pair(&k, &k).unwrap();
        let b: f64 = rho_mbc_pair(&k, &k).unwrap();
        assert_eq!(a, 1.0);
        assert_eq!(b, 1.0);
    }

    #[test]
    fn cv_epanechnikov() {
        let v: f64 = psi_factor(PsiMethod::Cv, Estimator::Ll, &K::epanechnikov()).unwrap();
        assert!((v - 3.6).abs() < 1e-9, "{v}");
    }

    #[test]
    fn bo_equals_do() {
        let k = K::quartic();
        let a: f64 = psi_factor(PsiMethod::Bo, Estimator::Ll, &k).unwrap();
        let b: f64 = psi_factor(PsiMethod::Do, Estimator::Ll, &k).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn asymmetric_rejected() {
        let l = K::epanechnikov().one_sided(Side::Left).unwrap();
        assert!(matches!(rho_ll(&l), Err(Error::AsymmetricKernel(_))));
        assert!(psi_factor::<f64>(PsiMethod::Cv, Estimator::Ll, &l).is_err());
    }

    #[test]
    fn discontinuous_kernel_has_no_derivative_factor() {
        let uniform = K::custom(&[(-1.0, 1.0, vec![0.5])]).unwrap();
        assert!(matches!(
            psi_factor::<f64>(PsiMethod::Mise, Estimator::Ll, &uniform),
            Err(Error::DerivativeUnavailable(_))
        ));
    }
}
