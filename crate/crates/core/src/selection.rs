//! Cross-validation scores and grid-search bandwidth selectors: ordinary,
//! one-sided, double one-sided and best one-sided cross-validation.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{rho, Estimator};
use crate::data::{GridSample, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::{fit, select_sides, side_mask, EstimatorKind, Fit, SideMode};
use crate::kernel::{Kernel, Side};
use crate::scalar::{compensated_sum, Scalar};

/// Strictly increasing positive candidate bandwidths.
#[derive(Clone, Debug, PartialEq)]
pub struct BandwidthGrid<T> {
    values: Vec<T>,
}

impl<T: Scalar> BandwidthGrid<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Config("bandwidth grid needs at least two values".into()));
        }
        if values.iter().any(|b| !(*b > T::zero()) || !b.is_finite()) {
            return Err(Error::Config("bandwidths must be positive and finite".into()));
        }
        if values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("bandwidth grid must be strictly increasing".into()));
        }
        Ok(Self { values })
    }

    /// `count` equally spaced values from `min` to `max` inclusive.
    pub fn linspace(min: T, max: T, count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config("bandwidth grid needs at least two values".into()));
        }
        let step = (max - min) / T::from_count(count - 1);
        Self::new((0..count).map(|i| if i + 1 == count { max } else { min + step * T::from_count(i) }).collect())
    }

    /// 50 equally spaced values from `2δ` to half the window.
    pub fn default_for(sample: &GridSample<T>) -> Result<Self> {
        let (t0, t1) = sample.window();
        let lo = sample.delta() * T::lit(2.0);
        let hi = (t1 - t0) * T::lit(0.5);
        if !(hi > lo) {
            return Err(Error::Validation(format!("window too short for a default bandwidth grid ({} cells)", sample.len())));
        }
        Self::linspace(lo, hi, 50)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn min(&self) -> T {
        self.values[0]
    }

    pub fn max(&self) -> T {
        self.values[self.values.len() - 1]
    }

    /// Reject grids with a bandwidth not exceeding the sample's grid step.
    pub fn check_against(&self, sample: &GridSample<T>) -> Result<()> {
        if self.min() <= sample.delta() {
            return Err(Error::Config(format!(
                "smallest bandwidth {} does not exceed the grid step {}",
                self.min(),
                sample.delta()
            )));
        }
        Ok(())
    }
}

impl<T: Scalar> FromStr for BandwidthGrid<T> {
    type Err = Error;

    /// Parse `min:max:count`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("bandwidth grid '{s}' is not min:max:count")));
        }
        let num = |x: &str| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bandwidth grid '{s}': '{x}' is not a number")))
        };
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bandwidth grid '{s}': bad count")))?;
        Self::linspace(T::lit(num(parts[0])?), T::lit(num(parts[1])?), count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Cv,
    OscvLeft,
    OscvRight,
    Do,
    Bo,
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMethod::Cv => "cv",
            SelectionMethod::OscvLeft => "oscv_left",
            SelectionMethod::OscvRight => "oscv_right",
            SelectionMethod::Do => "do",
            SelectionMethod::Bo => "bo",
        })
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv" => Ok(SelectionMethod::Cv),
            "oscv_left" | "left" => Ok(SelectionMethod::OscvLeft),
            "oscv_right" | "right" => Ok(SelectionMethod::OscvRight),
            "do" => Ok(SelectionMethod::Do),
            "bo" => Ok(SelectionMethod::Bo),
            other => Err(Error::Config(format!("unknown selection method '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    pub minimum_at_grid_edge: bool,
    pub multiple_local_minima: bool,
    pub side_score_degenerate: bool,
}

/// A selected bandwidth with its score trace(s).
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult<T> {
    /// Bandwidth for the two-sided estimator (rescaled by `ρ` where needed).
    pub bandwidth: T,
    /// Grid minimizer before rescaling (the mean of both sides for DO).
    pub raw_bandwidth: T,
    pub rho: T,
    pub method: SelectionMethod,
    pub estimator: Estimator,
    /// `(b, score)`; undefined scores are NaN. For DO, the left score.
    pub score_trace: Vec<(T, T)>,
    /// For DO, the right score.
    pub right_trace: Option<Vec<(T, T)>>,
    pub diagnostics: Diagnostics,
}

impl<T: Scalar> SelectionResult<T> {
    /// Write CSV `method,estimator,bandwidth,raw_bandwidth,rho,minimum_at_grid_edge,multiple_local_minima,side_score_degenerate`.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "method",
            "estimator",
            "bandwidth",
            "raw_bandwidth",
            "rho",
            "minimum_at_grid_edge",
            "multiple_local_minima",
            "side_score_degenerate",
        ])?;
        let d = &self.diagnostics;
        w.write_record([
            self.method.to_string(),
            self.estimator.to_string(),
            self.bandwidth.to_string(),
            self.raw_bandwidth.to_string(),
            self.rho.to_string(),
            d.minimum_at_grid_edge.to_string(),
            d.multiple_local_minima.to_string(),
            d.side_score_degenerate.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }

    /// Write the trace as CSV `bandwidth,score` (DO: `bandwidth,score_left,score_right`).
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        match &self.right_trace {
            Some(right) => {
                w.write_record(["bandwidth", "score_left", "score_right"])?;
                for ((b, l), (_, r)) in self.score_trace.iter().zip(right) {
                    w.write_record([b.to_string(), l.to_string(), r.to_string()])?;
                }
            }
            None => {
                w.write_record(["bandwidth", "score"])?;
                for (b, s) in &self.score_trace {
                    w.write_record([b.to_string(), s.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n⁻¹ [Σ α̂² Y w − 2 Σ α̂^{[r]} w O]` over defined cells.
pub(crate) fn score_from_fit<T: Scalar>(sample: &GridSample<T>, f: &Fit<T>, w: &[T]) -> Option<T> {
    if !f.defined.iter().any(|&d| d) {
        return None;
    }
    let y = sample.exposures();
    let o = sample.occurrences();
    let first = compensated_sum((0..sample.len()).filter(|&r| f.defined[r]).map(|r| f.raw[r] * f.raw[r] * y[r] * w[r]));
    let second = compensated_sum(
        (0..sample.len())
            .filter(|&r| f.defined[r] && o[r] != T::zero())
            .map(|r| f.loo[r] * w[r] * o[r]),
    );
    Some((first - T::lit(2.0) * second) / T::from_count(sample.n().max(1)))
}

/// Cross-validation score of the given estimator at bandwidth `b`.
///
/// For the best one-sided kinds, `kernel` is the symmetric kernel whose
/// one-sided versions are combined per `mode`.
pub fn cv_score<T: Scalar>(
    sample: &GridSample<T>,
    b: T,
    kind: EstimatorKind,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
    mode: SideMode,
) -> Result<T> {
    let w = weights.weights(sample)?;
    let (f, _) = fit(sample, b, kernel, kind, mode, true)?;
    score_from_fit(sample, &f, &w).ok_or(Error::ScoreUndefined { bandwidth: b.to_f64_lossy() })
}

fn score_or_nan<T: Scalar>(r: Result<Option<T>>) -> Result<T> {
    match r {
        Ok(Some(s)) => Ok(s),
        Ok(None) => Ok(T::nan()),
        Err(Error::DegeneratePilot) => Ok(T::nan()),
        Err(e) => Err(e),
    }
}

/// Scores over the grid for the estimator of `kind` with `kernel`.
pub fn score_trace<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    kind: EstimatorKind,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
    mode: SideMode,
) -> Result<Vec<(T, T)>> {
    let w = weights.weights(sample)?;
    grid.values()
        .par_iter()
        .map(|&b| {
            let s = score_or_nan(fit(sample, b, kernel, kind, mode, true).map(|(f, _)| score_from_fit(sample, &f, &w)))?;
            Ok((b, s))
        })
        .collect()
}

/// Left one-sided, right one-sided and best one-sided traces from shared fits.
pub struct OneSidedTraces<T> {
    pub left: Vec<(T, T)>,
    pub right: Vec<(T, T)>,
    pub best: Vec<(T, T)>,
}

pub fn one_sided_traces<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    estimator: Estimator,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
    mode: SideMode,
) -> Result<OneSidedTraces<T>> {
    let w = weights.weights(sample)?;
    let lk = kernel.one_sided(Side::Left)?;
    let rk = kernel.one_sided(Side::Right)?;
    let kind = EstimatorKind::from(estimator);
    let rows: Vec<Result<(T, T, T, T)>> = grid
        .values()
        .par_iter()
        .map(|&b| {
            let l = fit(sample, b, &lk, kind, mode, true);
            let r = fit(sample, b, &rk, kind, mode, true);
            let sl = score_or_nan(l.as_ref().map(|(f, _)| score_from_fit(sample, f, &w)).map_err(clone_err))?;
            let sr = score_or_nan(r.as_ref().map(|(f, _)| score_from_fit(sample, f, &w)).map_err(clone_err))?;
            let sb = match (&l, &r) {
                (Ok((lf, _)), Ok((rf, _))) => {
                    let mask = side_mask(sample, b, mode);
                    score_from_fit(sample, &select_sides(&mask, lf, rf), &w).unwrap_or_else(T::nan)
                }
                _ => {
                    // One side degenerate: score the best one-sided fit directly.
                    score_or_nan(
                        fit(sample, b, kernel, EstimatorKind::best_one_sided(estimator), mode, true)
                            .map(|(f, _)| score_from_fit(sample, &f, &w)),
                    )?
                }
            };
            Ok((b, sl, sr, sb))
        })
        .collect();
    let mut out = OneSidedTraces { left: Vec::new(), right: Vec::new(), best: Vec::new() };
    for row in rows {
        let (b, l, r, s) = row?;
        out.left.push((b, l));
        out.right.push((b, r));
        out.best.push((b, s));
    }
    Ok(out)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::DegeneratePilot => Error::DegeneratePilot,
        other => Error::SelectionFailed(other.to_string()),
    }
}

/// Grid minimizer of a trace (smallest `b` on ties) with diagnostics.
pub fn minimize_trace<T: Scalar>(trace: &[(T, T)]) -> Result<(T, Diagnostics)> {
    let defined: Vec<(T, T)> = trace.iter().copied().filter(|(_, s)| s.is_finite()).collect();
    if defined.is_empty() {
        return Err(Error::SelectionFailed("score undefined at every bandwidth".into()));
    }
    let mut best = 0;
    for (i, (_, s)) in defined.iter().enumerate() {
        if *s < defined[best].1 {
            best = i;
        }
    }
    let m = defined.len();
    let s = |i: usize| defined[i].1;
    let mut minima = 0;
    if m > 1 {
        for i in 0..m {
            let lower_left = i == 0 || s(i) < s(i - 1);
            let lower_right = i + 1 == m || s(i) < s(i + 1);
            if lower_left && lower_right {
                minima += 1;
            }
        }
    }
    let diag = Diagnostics {
        minimum_at_grid_edge: best == 0 || best + 1 == m,
        multiple_local_minima: minima > 1,
        side_score_degenerate: false,
    };
    Ok((defined[best].0, diag))
}

fn result_from_trace<T: Scalar>(
    trace: Vec<(T, T)>,
    method: SelectionMethod,
    estimator: Estimator,
    rho: T,
) -> Result<SelectionResult<T>> {
    let (raw, diagnostics) = minimize_trace(&trace)?;
    Ok(SelectionResult {
        bandwidth: rho * raw,
        raw_bandwidth: raw,
        rho,
        method,
        estimator,
        score_trace: trace,
        right_trace: None,
        diagnostics,
    })
}

/// Ordinary cross-validation.
pub fn select_cv<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    estimator: Estimator,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
) -> Result<SelectionResult<T>> {
    grid.check_against(sample)?;
    let trace = score_trace(sample, grid, estimator.into(), kernel, weights, SideMode::default())?;
    result_from_trace(trace, SelectionMethod::Cv, estimator, T::one())
}

/// One-sided cross-validation with the `side` kernel; the bandwidth is
/// rescaled by `ρ` to the symmetric kernel.
pub fn select_oscv<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    estimator: Estimator,
    kernel: &Kernel<T>,
    side: Side,
    weights: &WeightScheme<T>,
) -> Result<SelectionResult<T>> {
    grid.check_against(sample)?;
    let r = rho(kernel, estimator)?;
    let k = kernel.one_sided(side)?;
    let trace = score_trace(sample, grid, estimator.into(), &k, weights, SideMode::default())?;
    let method = match side {
        Side::Left => SelectionMethod::OscvLeft,
        Side::Right => SelectionMethod::OscvRight,
    };
    result_from_trace(trace, method, estimator, r)
}

/// Combine two one-sided traces into a double one-sided selection.
pub fn do_from_traces<T: Scalar>(
    left: Vec<(T, T)>,
    right: Vec<(T, T)>,
    estimator: Estimator,
    rho: T,
) -> Result<SelectionResult<T>> {
    let l = minimize_trace(&left);
    let r = minimize_trace(&right);
    let (bl, br, degenerate) = match (&l, &r) {
        (Ok((bl, dl)), Ok((br, dr))) => (*bl, *br, dl.minimum_at_grid_edge || dr.minimum_at_grid_edge),
        (Ok((bl, _)), Err(_)) => (*bl, *bl, true),
        (Err(_), Ok((br, _))) => (*br, *br, true),
        (Err(_), Err(_)) => return Err(Error::SelectionFailed("both one-sided scores undefined".into())),
    };
    let raw = (bl + br) * T::lit(0.5);
    let multiple = l.as_ref().map(|x| x.1.multiple_local_minima).unwrap_or(false)
        || r.as_ref().map(|x| x.1.multiple_local_minima).unwrap_or(false);
    Ok(SelectionResult {
        bandwidth: rho * raw,
        raw_bandwidth: raw,
        rho,
        method: SelectionMethod::Do,
        estimator,
        score_trace: left,
        right_trace: Some(right),
        diagnostics: Diagnostics {
            minimum_at_grid_edge: false,
            multiple_local_minima: multiple,
            side_score_degenerate: degenerate,
        },
    })
}

/// Double one-sided cross-validation: `ρ (b_L + b_R) / 2`.
pub fn select_do<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    estimator: Estimator,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
) -> Result<SelectionResult<T>> {
    grid.check_against(sample)?;
    let r = rho(kernel, estimator)?;
    let kind = EstimatorKind::from(estimator);
    let left = score_trace(sample, grid, kind, &kernel.one_sided(Side::Left)?, weights, SideMode::default())?;
    let right = score_trace(sample, grid, kind, &kernel.one_sided(Side::Right)?, weights, SideMode::default())?;
    do_from_traces(left, right, estimator, r)
}

/// Best one-sided cross-validation: `ρ` times the minimizer of the score of
/// the side-switching estimator, with `ξ_b` recomputed for every `b`.
pub fn select_bo<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    estimator: Estimator,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
    mode: SideMode,
) -> Result<SelectionResult<T>> {
    grid.check_against(sample)?;
    let r = rho(kernel, estimator)?;
    let trace = score_trace(sample, grid, EstimatorKind::best_one_sided(estimator), kernel, weights, mode)?;
    result_from_trace(trace, SelectionMethod::Bo, estimator, r)
}

/// Dispatch on `method`.
pub fn select<T: Scalar>(
    sample: &GridSample<T>,
    grid: &BandwidthGrid<T>,
    method: SelectionMethod,
    estimator: Estimator,
    kernel: &Kernel<T>,
    weights: &WeightScheme<T>,
    mode: SideMode,
) -> Result<SelectionResult<T>> {
    match method {
        SelectionMethod::Cv => select_cv(sample, grid, estimator, kernel, weights),
        SelectionMethod::OscvLeft => select_oscv(sample, grid, estimator, kernel, Side::Left, weights),
        SelectionMethod::OscvRight => select_oscv(sample, grid, estimator, kernel, Side::Right, weights),
        SelectionMethod::Do => select_do(sample, grid, estimator, kernel, weights),
        SelectionMethod::Bo => select_bo(sample, grid, estimator, kernel, weights, mode),
    }
}
