//! Local linear, multiplicatively bias corrected and best one-sided hazard
//! estimators on a [`GridSample`].
//!
//! Kernels are evaluated at `(s - t)/b`, so a left one-sided kernel
//! (support `[-1, 0]`) smooths over `[t - b, t]`. Moments use powers of
//! `t - s`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants::Estimator;
use crate::data::GridSample;
use crate::error::{Error, Result};
use crate::kernel::{Kernel, Side};
use crate::scalar::Scalar;

/// Relative threshold below which a moment determinant counts as zero.
const DET_TOL: f64 = 1e-10;
/// Pilot values below this fraction of the pilot maximum are excluded.
const PILOT_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    Ll,
    Mbc,
    BoLl,
    BoMbc,
}

impl EstimatorKind {
    pub fn base(self) -> Estimator {
        match self {
            EstimatorKind::Ll | EstimatorKind::BoLl => Estimator::Ll,
            EstimatorKind::Mbc | EstimatorKind::BoMbc => Estimator::Mbc,
        }
    }

    pub fn best_one_sided(base: Estimator) -> Self {
        match base {
            Estimator::Ll => EstimatorKind::BoLl,
            Estimator::Mbc => EstimatorKind::BoMbc,
        }
    }
}

impl From<Estimator> for EstimatorKind {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::Ll => EstimatorKind::Ll,
            Estimator::Mbc => EstimatorKind::Mbc,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Ll => "ll",
            EstimatorKind::Mbc => "mbc",
            EstimatorKind::BoLl => "bo_ll",
            EstimatorKind::BoMbc => "bo_mbc",
        })
    }
}

/// Which process decides the side in best one-sided estimation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideMode {
    #[default]
    Occurrence,
    Exposure,
}

impl FromStr for SideMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "occurrence" => Ok(SideMode::Occurrence),
            "exposure" => Ok(SideMode::Exposure),
            other => Err(Error::Config(format!("unknown side mode '{other}'"))),
        }
    }
}

impl fmt::Display for SideMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SideMode::Occurrence => "occurrence",
            SideMode::Exposure => "exposure",
        })
    }
}

/// A fitted hazard curve on the sample grid.
#[derive(Clone, Debug, PartialEq)]
pub struct HazardEstimate<T> {
    pub times: Vec<T>,
    pub delta: T,
    /// Published values, clipped at zero.
    pub values: Vec<T>,
    /// Unclipped values.
    pub raw: Vec<T>,
    /// Cells where the moment determinant vanished; their value is zero.
    pub undefined: Vec<bool>,
    pub kind: EstimatorKind,
    pub bandwidth: T,
    pub kernel: String,
    /// `ξ_b(t_r)`: `true` where the left one-sided fit was used.
    pub side_mask: Option<Vec<bool>>,
}

impl<T: Scalar> HazardEstimate<T> {
    fn from_fit(sample: &GridSample<T>, fit: Fit<T>, kind: EstimatorKind, b: T, kernel: String, mask: Option<Vec<bool>>) -> Self {
        let values = fit.raw.iter().map(|&v| v.max(T::zero())).collect();
        Self {
            times: sample.times(),
            delta: sample.delta(),
            values,
            raw: fit.raw,
            undefined: fit.defined.iter().map(|d| !d).collect(),
            kind,
            bandwidth: b,
            kernel,
            side_mask: mask,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Write as CSV `time,hazard[,side]`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        match &self.side_mask {
            Some(mask) => {
                w.write_record(["time", "hazard", "side"])?;
                for ((t, v), m) in self.times.iter().zip(&self.values).zip(mask) {
                    let side = if *m { Side::Left } else { Side::Right };
                    w.write_record([t.to_string(), v.to_string(), side.to_string()])?;
                }
            }
            None => {
                w.write_record(["time", "hazard"])?;
                for (t, v) in self.times.iter().zip(&self.values) {
                    w.write_record([t.to_string(), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw values, leave-one-occurrence-out values and definedness per cell.
#[derive(Clone, Debug)]
pub(crate) struct Fit<T> {
    pub raw: Vec<T>,
    pub loo: Vec<T>,
    pub defined: Vec<bool>,
}

/// Kernel values `K_b(k δ)` and distances `t_r - t_{r+k} = -k δ` for the
/// grid offsets `k` inside the kernel support.
struct Stencil<T> {
    lo: isize,
    kv: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> Stencil<T> {
    fn new(kernel: &Kernel<T>, b: T, delta: T) -> Self {
        let (slo, shi) = kernel.support();
        let ratio = (b / delta).to_f64_lossy();
        let eps = 1e-9;
        let lo = (slo.to_f64_lossy() * ratio - eps).ceil() as isize;
        let hi = (shi.to_f64_lossy() * ratio + eps).floor() as isize;
        let mut kv = Vec::with_capacity((hi - lo + 1).max(0) as usize);
        let mut d = Vec::with_capacity(kv.capacity());
        for k in lo..=hi {
            let off = delta * T::lit(k as f64);
            kv.push(kernel.eval(off / b) / b);
            d.push(-off);
        }
        Self { lo, kv, d }
    }

    #[inline]
    fn hi(&self) -> isize {
        self.lo + self.kv.len() as isize - 1
    }

    /// Offsets `k` (as stencil indices) whose cell `r + k` lies in `0..len`.
    #[inline]
    fn range(&self, r: usize, len: usize) -> std::ops::Range<usize> {
        let r = r as isize;
        let first = (-r - self.lo).max(0) as usize;
        let last = ((len as isize - 1 - r) - self.lo + 1).min(self.kv.len() as isize).max(0) as usize;
        first..last.max(first)
    }

    #[inline]
    fn cell(&self, r: usize, i: usize) -> usize {
        (r as isize + self.lo + i as isize) as usize
    }

    /// Stencil index of offset zero, if present.
    fn zero(&self) -> Option<usize> {
        if self.lo <= 0 && self.hi() >= 0 {
            Some((-self.lo) as usize)
        } else {
            None
        }
    }
}

/// `(a0, a1, a2)`, the determinant and definedness.
#[derive(Clone, Copy, Debug)]
struct Moments<T> {
    a1: T,
    a2: T,
    det: T,
    defined: bool,
}

fn moments_at<T: Scalar>(st: &Stencil<T>, r: usize, mass: &[T]) -> Moments<T> {
    let mut a0 = T::zero();
    let mut a1 = T::zero();
    let mut a2 = T::zero();
    for i in st.range(r, mass.len()) {
        let y = mass[st.cell(r, i)];
        if y == T::zero() {
            continue;
        }
        let kd = st.kv[i] * y;
        a0 += kd;
        a1 += kd * st.d[i];
        a2 += kd * st.d[i] * st.d[i];
    }
    let det = a0 * a2 - a1 * a1;
    let defined = a0 > T::zero() && det > T::lit(DET_TOL) * a0 * a2;
    Moments { a1, a2, det, defined }
}

impl<T: Scalar> Moments<T> {
    #[inline]
    fn weight(&self, kv: T, d: T) -> T {
        (self.a2 - self.a1 * d) / self.det * kv
    }
}

fn check_bandwidth<T: Scalar>(b: T) -> Result<()> {
    if b > T::zero() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("bandwidth must be positive and finite, got {b}")))
    }
}

/// `a_j = Σ_q K_b(t_q - t)(t - t_q)^j Y_q`, optionally with each term
/// multiplied by `pilot_q²`.
pub fn stochastic_moments<T: Scalar>(
    sample: &GridSample<T>,
    t: T,
    b: T,
    kernel: &Kernel<T>,
    weighted_by: Option<&[T]>,
) -> Result<(T, T, T)> {
    check_bandwidth(b)?;
    if let Some(p) = weighted_by {
        if p.len() != sample.len() {
            return Err(Error::Validation(format!("{} pilot values for {} cells", p.len(), sample.len())));
        }
    }
    let mut a = [T::zero(); 3];
    for (q, &y) in sample.exposures().iter().enumerate() {
        let d = t - sample.time(q);
        let k = kernel.eval(-d / b) / b;
        if k == T::zero() || y == T::zero() {
            continue;
        }
        let m = match weighted_by {
            Some(p) => k * y * p[q] * p[q],
            None => k * y,
        };
        a[0] += m;
        a[1] += m * d;
        a[2] += m * d * d;
    }
    Ok((a[0], a[1], a[2]))
}

/// Local linear fit with its leave-one-out values.
pub(crate) struct LlFit<T> {
    fit: Fit<T>,
    moments: Vec<Moments<T>>,
    stencil: Stencil<T>,
}

pub(crate) fn ll_fit<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>) -> LlFit<T> {
    let st = Stencil::new(kernel, b, sample.delta());
    let o = sample.occurrences();
    let n = sample.len();
    let zero = st.zero();
    let mut raw = vec![T::zero(); n];
    let mut loo = vec![T::zero(); n];
    let mut defined = vec![false; n];
    let mut moments = Vec::with_capacity(n);
    for r in 0..n {
        let m = moments_at(&st, r, sample.exposures());
        moments.push(m);
        if !m.defined {
            continue;
        }
        defined[r] = true;
        let mut acc = T::zero();
        for i in st.range(r, n) {
            let oq = o[st.cell(r, i)];
            if oq != T::zero() {
                acc += m.weight(st.kv[i], st.d[i]) * oq;
            }
        }
        raw[r] = acc;
        loo[r] = match zero {
            Some(i0) => acc - m.weight(st.kv[i0], st.d[i0]),
            None => acc,
        };
    }
    LlFit { fit: Fit { raw, loo, defined }, moments, stencil: st }
}

impl<T: Scalar> LlFit<T> {
    /// Weight of cell `r` in the fit at cell `q`, zero outside the stencil.
    #[inline]
    fn weight_of(&self, q: usize, r: usize) -> T {
        let m = &self.moments[q];
        if !m.defined {
            return T::zero();
        }
        let k = r as isize - q as isize;
        if k < self.stencil.lo || k > self.stencil.hi() {
            return T::zero();
        }
        let i = (k - self.stencil.lo) as usize;
        m.weight(self.stencil.kv[i], self.stencil.d[i])
    }
}

/// Effective weights `(q, w_q)` of the local linear fit at cell `r`, so
/// that the estimate is `Σ w_q O_q`; `None` where the fit is undefined.
pub fn local_linear_weights<T: Scalar>(
    sample: &GridSample<T>,
    r: usize,
    b: T,
    kernel: &Kernel<T>,
) -> Result<Option<Vec<(usize, T)>>> {
    check_bandwidth(b)?;
    if r >= sample.len() {
        return Err(Error::Validation(format!("cell {r} outside a grid of {} cells", sample.len())));
    }
    let st = Stencil::new(kernel, b, sample.delta());
    let m = moments_at(&st, r, sample.exposures());
    if !m.defined {
        return Ok(None);
    }
    Ok(Some(st.range(r, sample.len()).map(|i| (st.cell(r, i), m.weight(st.kv[i], st.d[i]))).collect()))
}

/// Multiplicatively bias corrected value at cell `r` for a given pilot and
/// occurrence sequence; `None` when the corrected moments are degenerate.
fn mbc_at<T: Scalar>(
    st: &Stencil<T>,
    r: usize,
    pilot: impl Fn(usize) -> T,
    floor: T,
    exposures: &[T],
    occ: impl Fn(usize) -> T,
) -> Option<T> {
    let n = exposures.len();
    let mut a0 = T::zero();
    let mut a1 = T::zero();
    let mut a2 = T::zero();
    for i in st.range(r, n) {
        let q = st.cell(r, i);
        let p = pilot(q);
        if p < floor || p <= T::zero() {
            continue;
        }
        let m = st.kv[i] * p * p * exposures[q];
        a0 += m;
        a1 += m * st.d[i];
        a2 += m * st.d[i] * st.d[i];
    }
    let det = a0 * a2 - a1 * a1;
    if !(a0 > T::zero() && det > T::lit(DET_TOL) * a0 * a2) {
        return None;
    }
    let pr = pilot(r);
    if pr < floor || pr <= T::zero() {
        return Some(T::zero());
    }
    let mut acc = T::zero();
    for i in st.range(r, n) {
        let q = st.cell(r, i);
        let p = pilot(q);
        let oq = occ(q);
        if oq == T::zero() || p < floor || p <= T::zero() {
            continue;
        }
        acc += (a2 - a1 * st.d[i]) / det * st.kv[i] * p * oq;
    }
    Some(pr * acc)
}

pub(crate) fn mbc_fit<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>, with_loo: bool) -> Result<Fit<T>> {
    let pilot_fit = ll_fit(sample, b, kernel);
    let p = &pilot_fit.fit.raw;
    let pmax = p.iter().fold(T::neg_infinity(), |a, &x| a.max(x));
    if !(pmax > T::zero()) {
        return Err(Error::DegeneratePilot);
    }
    let floor = T::lit(PILOT_FLOOR) * pmax;
    let st = &pilot_fit.stencil;
    let n = sample.len();
    let y = sample.exposures();
    let o = sample.occurrences();
    let mut raw = vec![T::zero(); n];
    let mut loo = vec![T::zero(); n];
    let mut defined = vec![false; n];

    // Prefix and suffix maxima of the pilot, for the leave-one-out floor.
    let mut prefix = vec![T::neg_infinity(); n + 1];
    let mut suffix = vec![T::neg_infinity(); n + 1];
    for q in 0..n {
        prefix[q + 1] = prefix[q].max(p[q]);
    }
    for q in (0..n).rev() {
        suffix[q] = suffix[q + 1].max(p[q]);
    }

    for r in 0..n {
        if !pilot_fit.fit.defined[r] {
            continue;
        }
        let Some(v) = mbc_at(st, r, |q| p[q], floor, y, |q| o[q]) else {
            continue;
        };
        defined[r] = true;
        raw[r] = v;
        loo[r] = v;
        if !with_loo || o[r] == T::zero() {
            continue;
        }
        // Removing one occurrence at r changes the pilot at cells q whose
        // stencil covers r, i.e. q = r - k.
        let ch_lo = (r as isize - st.hi()).max(0);
        let ch_hi = (r as isize - st.lo).min(n as isize - 1);
        let pilot_loo = |q: usize| {
            let qi = q as isize;
            if qi >= ch_lo && qi <= ch_hi {
                p[q] - pilot_fit.weight_of(q, r)
            } else {
                p[q]
            }
        };
        let mut lmax = T::neg_infinity();
        if ch_hi >= ch_lo {
            lmax = prefix[ch_lo as usize].max(suffix[(ch_hi + 1) as usize]);
            for q in ch_lo as usize..=ch_hi as usize {
                lmax = lmax.max(pilot_loo(q));
            }
        } else {
            lmax = lmax.max(prefix[n]);
        }
        loo[r] = if lmax > T::zero() {
            let lfloor = T::lit(PILOT_FLOOR) * lmax;
            let occ_loo = |q: usize| if q == r { o[q] - T::one() } else { o[q] };
            mbc_at(st, r, pilot_loo, lfloor, y, occ_loo).unwrap_or(T::zero())
        } else {
            T::zero()
        };
    }
    Ok(Fit { raw, loo, defined })
}

/// `ξ_b(t)`: whether the sum of occurrences (or exposures) over cells with
/// `t_q ∈ [t - b, t]` strictly exceeds the sum over `t_q ∈ [t, t + b]`.
/// Ties select the right side.
pub fn side_select<T: Scalar>(sample: &GridSample<T>, t: T, b: T, mode: SideMode) -> bool {
    let values = match mode {
        SideMode::Occurrence => sample.occurrences(),
        SideMode::Exposure => sample.exposures(),
    };
    let eps = sample.delta() * T::lit(1e-9);
    let mut left = T::zero();
    let mut right = T::zero();
    for (q, &v) in values.iter().enumerate() {
        let tq = sample.time(q);
        if tq >= t - b - eps && tq <= t + eps {
            left += v;
        }
        if tq >= t - eps && tq <= t + b + eps {
            right += v;
        }
    }
    left > right
}

/// `ξ_b(t_r)` at every grid point.
pub fn side_mask<T: Scalar>(sample: &GridSample<T>, b: T, mode: SideMode) -> Vec<bool> {
    let values = match mode {
        SideMode::Occurrence => sample.occurrences(),
        SideMode::Exposure => sample.exposures(),
    };
    let n = values.len();
    let w = ((b / sample.delta()).to_f64_lossy() + 1e-9).floor() as usize;
    let mut cum = vec![T::zero(); n + 1];
    for q in 0..n {
        cum[q + 1] = cum[q] + values[q];
    }
    (0..n)
        .map(|r| {
            let left = cum[r + 1] - cum[r.saturating_sub(w)];
            let right = cum[(r + w + 1).min(n)] - cum[r];
            left > right
        })
        .collect()
}

/// Combine left and right fits cell by cell according to `mask`.
pub(crate) fn select_sides<T: Scalar>(mask: &[bool], left: &Fit<T>, right: &Fit<T>) -> Fit<T> {
    let pick = |l: &[T], r: &[T]| mask.iter().enumerate().map(|(i, &m)| if m { l[i] } else { r[i] }).collect();
    Fit {
        raw: pick(&left.raw, &right.raw),
        loo: pick(&left.loo, &right.loo),
        defined: mask
            .iter()
            .enumerate()
            .map(|(i, &m)| if m { left.defined[i] } else { right.defined[i] })
            .collect(),
    }
}

/// Fit of any kind with leave-one-out values. Best one-sided kinds expect a
/// symmetric `kernel` and use its one-sided versions.
pub(crate) fn fit<T: Scalar>(
    sample: &GridSample<T>,
    b: T,
    kernel: &Kernel<T>,
    kind: EstimatorKind,
    mode: SideMode,
    with_loo: bool,
) -> Result<(Fit<T>, Option<Vec<bool>>)> {
    check_bandwidth(b)?;
    match kind {
        EstimatorKind::Ll => Ok((ll_fit(sample, b, kernel).fit, None)),
        EstimatorKind::Mbc => Ok((mbc_fit(sample, b, kernel, with_loo)?, None)),
        EstimatorKind::BoLl | EstimatorKind::BoMbc => {
            let left_k = kernel.one_sided(Side::Left)?;
            let right_k = kernel.one_sided(Side::Right)?;
            let mask = side_mask(sample, b, mode);
            let (l, r) = if kind == EstimatorKind::BoLl {
                (ll_fit(sample, b, &left_k).fit, ll_fit(sample, b, &right_k).fit)
            } else {
                (mbc_fit(sample, b, &left_k, with_loo)?, mbc_fit(sample, b, &right_k, with_loo)?)
            };
            Ok((select_sides(&mask, &l, &r), Some(mask)))
        }
    }
}

/// Local linear hazard estimate.
pub fn ll_hazard<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>) -> Result<HazardEstimate<T>> {
    check_bandwidth(b)?;
    let f = ll_fit(sample, b, kernel).fit;
    Ok(HazardEstimate::from_fit(sample, f, EstimatorKind::Ll, b, kernel.to_string(), None))
}

/// Multiplicatively bias corrected hazard estimate with a local linear pilot
/// of the same bandwidth and kernel.
pub fn mbc_hazard<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>) -> Result<HazardEstimate<T>> {
    check_bandwidth(b)?;
    let f = mbc_fit(sample, b, kernel, false)?;
    Ok(HazardEstimate::from_fit(sample, f, EstimatorKind::Mbc, b, kernel.to_string(), None))
}

/// Best one-sided local linear estimate: left one-sided fit where
/// `ξ_b = 1`, right one-sided fit elsewhere.
pub fn bo_ll_hazard<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>, mode: SideMode) -> Result<HazardEstimate<T>> {
    let (f, mask) = fit(sample, b, kernel, EstimatorKind::BoLl, mode, false)?;
    Ok(HazardEstimate::from_fit(sample, f, EstimatorKind::BoLl, b, kernel.to_string(), mask))
}

/// Best one-sided bias corrected estimate with matching-side pilots.
pub fn bo_mbc_hazard<T: Scalar>(sample: &GridSample<T>, b: T, kernel: &Kernel<T>, mode: SideMode) -> Result<HazardEstimate<T>> {
    let (f, mask) = fit(sample, b, kernel, EstimatorKind::BoMbc, mode, false)?;
    Ok(HazardEstimate::from_fit(sample, f, EstimatorKind::BoMbc, b, kernel.to_string(), mask))
}

/// Estimate of the requested kind.
pub fn estimate<T: Scalar>(
    sample: &GridSample<T>,
    b: T,
    kernel: &Kernel<T>,
    kind: EstimatorKind,
    mode: SideMode,
) -> Result<HazardEstimate<T>> {
    match kind {
        EstimatorKind::Ll => ll_hazard(sample, b, kernel),
        EstimatorKind::Mbc => mbc_hazard(sample, b, kernel),
        EstimatorKind::BoLl => bo_ll_hazard(sample, b, kernel, mode),
        EstimatorKind::BoMbc => bo_mbc_hazard(sample, b, kernel, mode),
    }
}
