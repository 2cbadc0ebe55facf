//! Claims reserving on a run-off triangle through time-reversed hazards.
//!
//! Cells are 1-indexed: `x` is the underwriting period and `z` the reporting
//! delay, both in `1..=m`. A cell is observed iff `x + z <= m + 1`, the
//! remaining cells form the lower triangle to forecast. The calendar period
//! of a future cell is `x + z - m - 1`.
//!
//! Reversing time turns the right truncation of each coordinate into left
//! truncation. For the delay, `z' = m + 1 - z` enters the risk set at `x`;
//! for the underwriting period, `x' = m + 1 - x` enters at `z`. On the
//! reversed scale (grid points `1..=m`, unit spacing)
//!
//! ```text
//! O₂(z') = Σₓ N(x, m+1-z')           Y₂(z') = Σ_{x ≤ z'} Σ_{z ≤ m+1-z'} N(x, z)
//! O₁(x') = Σ_z N(m+1-x', z)           Y₁(x') = Σ_{z ≤ x'} Σ_{x ≤ m+1-x'} N(x, z)
//! ```

use std::path::Path;

use rayon::join;
use serde::Deserialize;

use crate::constants::Estimator;
use crate::data::{line_of, parse_num, GridSample, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, HazardEstimate, SideMode};
use crate::kernel::Kernel;
use crate::scalar::{compensated_sum, Scalar};
use crate::selection::{select, BandwidthGrid, SelectionMethod, SelectionResult};

/// Counts on the observed upper triangle of an `m × m` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOffTriangle<T> {
    m: usize,
    /// Row-major `m × m`; unobserved cells hold zero.
    counts: Vec<T>,
}

impl<T: Scalar> RunOffTriangle<T> {
    /// Build from `(x, z, count)` entries; repeated cells accumulate.
    pub fn new(m: usize, entries: &[(usize, usize, T)]) -> Result<Self> {
        if m == 0 {
            return Err(Error::Validation("triangle dimension must be positive".into()));
        }
        let mut counts = vec![T::zero(); m * m];
        for (i, &(x, z, c)) in entries.iter().enumerate() {
            if x < 1 || z < 1 || x + z > m + 1 {
                return Err(Error::Ingestion { index: i, reason: format!("cell ({x}, {z}) outside the observed triangle of dimension {m}") });
            }
            if !c.is_finite() || c < T::zero() {
                return Err(Error::Ingestion { index: i, reason: format!("count {c} is not finite and non-negative") });
            }
            counts[(x - 1) * m + z - 1] += c;
        }
        Ok(Self { m, counts })
    }

    /// Build from a function of `(x, z)` evaluated on the observed cells.
    pub fn from_fn(m: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let mut entries = Vec::new();
        for x in 1..=m {
            for z in 1..=m + 1 - x {
                entries.push((x, z, f(x, z)));
            }
        }
        Self::new(m, &entries)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn is_observed(&self, x: usize, z: usize) -> bool {
        x >= 1 && z >= 1 && x + z <= self.m + 1
    }

    /// Count at `(x, z)`; zero off the observed triangle.
    pub fn get(&self, x: usize, z: usize) -> T {
        if self.is_observed(x, z) {
            self.counts[(x - 1) * self.m + z - 1]
        } else {
            T::zero()
        }
    }

    pub fn total(&self) -> T {
        compensated_sum(self.counts.iter().copied())
    }

    /// Read CSV `x,z,count`. Cells not listed are zero.
    pub fn read_csv<R: std::io::Read>(input: R, m: Option<usize>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            x: String,
            z: String,
            count: String,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line_of(&rec, i + 2);
            let row: Row = rec.deserialize(Some(&headers)).map_err(|e| Error::Parse { line, reason: e.to_string() })?;
            let idx = |s: &str, what: &str| -> Result<usize> {
                s.parse::<usize>().map_err(|_| Error::Parse { line, reason: format!("{what} '{s}' is not a positive integer") })
            };
            let x = idx(&row.x, "x")?;
            let z = idx(&row.z, "z")?;
            let c: T = parse_num(&row.count, "count", line)?;
            if c < T::zero() {
                return Err(Error::Parse { line, reason: format!("negative count {c}") });
            }
            entries.push((x, z, c, line));
        }
        if entries.is_empty() {
            return Err(Error::EmptySample("triangle has no rows".into()));
        }
        let dim = m.unwrap_or_else(|| entries.iter().map(|e| e.0 + e.1 - 1).max().unwrap_or(1));
        if let Some(e) = entries.iter().find(|e| e.0 < 1 || e.1 < 1 || e.0 + e.1 > dim + 1) {
            return Err(Error::Parse { line: e.3, reason: format!("cell ({}, {}) outside the triangle of dimension {dim}", e.0, e.1) });
        }
        Self::new(dim, &entries.iter().map(|e| (e.0, e.1, e.2)).collect::<Vec<_>>())
    }

    pub fn load_csv(path: impl AsRef<Path>, m: Option<usize>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, m)
    }

    /// Write CSV `x,z,count` over all observed cells.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["x", "z", "count"])?;
        for x in 1..=self.m {
            for z in 1..=self.m + 1 - x {
                w.write_record([x.to_string(), z.to_string(), self.get(x, z).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Reversed-time samples `(underwriting, delay)` on the grid `1..=m`.
pub fn reverse_components<T: Scalar>(triangle: &RunOffTriangle<T>) -> Result<(GridSample<T>, GridSample<T>)> {
    let m = triangle.m();
    let total = triangle.total();
    if !(total > T::zero()) {
        return Err(Error::EmptySample("triangle has no counts".into()));
    }
    // Cumulative sums P[x][z] = Σ_{x'' ≤ x, z'' ≤ z} N.
    let mut cum = vec![T::zero(); (m + 1) * (m + 1)];
    for x in 1..=m {
        for z in 1..=m {
            cum[x * (m + 1) + z] =
                triangle.get(x, z) + cum[(x - 1) * (m + 1) + z] + cum[x * (m + 1) + z - 1] - cum[(x - 1) * (m + 1) + z - 1];
        }
    }
    let rect = |x: usize, z: usize| cum[x * (m + 1) + z];
    let mut o1 = Vec::with_capacity(m);
    let mut y1 = Vec::with_capacity(m);
    let mut o2 = Vec::with_capacity(m);
    let mut y2 = Vec::with_capacity(m);
    for r in 1..=m {
        let back = m + 1 - r;
        o1.push(compensated_sum((1..=m).map(|z| triangle.get(back, z))));
        y1.push(rect(back, r).max(T::zero()));
        o2.push(compensated_sum((1..=m).map(|x| triangle.get(x, back))));
        y2.push(rect(r, back).max(T::zero()));
    }
    let n = (total.to_f64_lossy().ceil() as usize).max(1);
    let end = T::from_count(m + 1);
    Ok((
        GridSample::new(T::zero(), end, o1, y1, n)?,
        GridSample::new(T::zero(), end, o2, y2, n)?,
    ))
}

/// Discrete product-limit survival `S(t_r) = Π_{q<r} (1 - α̂(t_q) δ)` clipped
/// to `[0, 1]`, and density `f = α̂ S`.
pub fn survival_and_density<T: Scalar>(hazard: &HazardEstimate<T>) -> (Vec<T>, Vec<T>) {
    let mut s = Vec::with_capacity(hazard.len());
    let mut f = Vec::with_capacity(hazard.len());
    let mut acc = T::one();
    for &a in &hazard.values {
        s.push(acc);
        f.push(a * acc);
        acc = (acc * (T::one() - a * hazard.delta)).max(T::zero()).min(T::one());
    }
    (s, f)
}

/// Reversed-time hazard fits of both components with survival and density,
/// all indexed on the reversed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentEstimates<T> {
    pub alpha1: HazardEstimate<T>,
    pub alpha2: HazardEstimate<T>,
    pub s1: Vec<T>,
    pub s2: Vec<T>,
    pub f1: Vec<T>,
    pub f2: Vec<T>,
}

impl<T: Scalar> ComponentEstimates<T> {
    pub fn from_hazards(alpha1: HazardEstimate<T>, alpha2: HazardEstimate<T>) -> Result<Self> {
        if alpha1.len() != alpha2.len() {
            return Err(Error::Validation("component estimates differ in length".into()));
        }
        let (s1, f1) = survival_and_density(&alpha1);
        let (s2, f2) = survival_and_density(&alpha2);
        Ok(Self { alpha1, alpha2, s1, s2, f1, f2 })
    }

    /// Underwriting density in original orientation, index `x - 1`.
    pub fn underwriting_density(&self) -> Vec<T> {
        self.f1.iter().rev().copied().collect()
    }

    /// Delay density in original orientation, index `z - 1`.
    pub fn delay_density(&self) -> Vec<T> {
        self.f2.iter().rev().copied().collect()
    }
}

/// Which reversed component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Underwriting,
    Delay,
}

/// `w₁ = S₁² (1 - S₂)² / Y₁` for the underwriting component and the mirrored
/// `w₂ = S₂² (1 - S₁)² / Y₂` for the delay; zero where `Y = 0`.
pub fn component_weights<T: Scalar>(
    component: Component,
    estimates: &ComponentEstimates<T>,
    sample: &GridSample<T>,
) -> Result<WeightScheme<T>> {
    let (own, other) = match component {
        Component::Underwriting => (&estimates.s1, &estimates.s2),
        Component::Delay => (&estimates.s2, &estimates.s1),
    };
    if own.len() != sample.len() {
        return Err(Error::Validation("estimates and sample lengths differ".into()));
    }
    let w = own
        .iter()
        .zip(other)
        .zip(sample.exposures())
        .map(|((&s, &o), &y)| {
            if y > T::zero() {
                let c = T::one() - o;
                s * s * c * c / y
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(WeightScheme::Custom(w))
}

/// Fit both components at fixed bandwidths.
pub fn fit_components<T: Scalar>(
    triangle: &RunOffTriangle<T>,
    bandwidths: (T, T),
    kernel: &Kernel<T>,
    kind: EstimatorKind,
    mode: SideMode,
) -> Result<ComponentEstimates<T>> {
    let (s1, s2) = reverse_components(triangle)?;
    let (a1, a2) = join(
        || estimate(&s1, bandwidths.0, kernel, kind, mode),
        || estimate(&s2, bandwidths.1, kernel, kind, mode),
    );
    ComponentEstimates::from_hazards(a1?, a2?)
}

/// Outcome of data-driven component fitting.
#[derive(Clone, Debug)]
pub struct ComponentSelection<T> {
    pub underwriting: SelectionResult<T>,
    pub delay: SelectionResult<T>,
    pub estimates: ComponentEstimates<T>,
}

/// Select a bandwidth per component in two passes: a pilot pass with
/// unit-product weights, then a pass with [`component_weights`] built from
/// the pilot fit. The final fit uses the second-pass bandwidths.
pub fn select_components<T: Scalar>(
    triangle: &RunOffTriangle<T>,
    grid: &BandwidthGrid<T>,
    method: SelectionMethod,
    estimator: Estimator,
    kernel: &Kernel<T>,
    mode: SideMode,
) -> Result<ComponentSelection<T>> {
    let (s1, s2) = reverse_components(triangle)?;
    let kind = EstimatorKind::from(estimator);
    let unit = WeightScheme::UnitProduct;
    let (p1, p2) = join(
        || select(&s1, grid, method, estimator, kernel, &unit, mode),
        || select(&s2, grid, method, estimator, kernel, &unit, mode),
    );
    let pilot = fit_components(triangle, (p1?.bandwidth, p2?.bandwidth), kernel, kind, mode)?;
    let w1 = component_weights(Component::Underwriting, &pilot, &s1)?;
    let w2 = component_weights(Component::Delay, &pilot, &s2)?;
    let (r1, r2) = join(
        || select(&s1, grid, method, estimator, kernel, &w1, mode),
        || select(&s2, grid, method, estimator, kernel, &w2, mode),
    );
    let (r1, r2) = (r1?, r2?);
    let estimates = fit_components(triangle, (r1.bandwidth, r2.bandwidth), kernel, kind, mode)?;
    Ok(ComponentSelection { underwriting: r1, delay: r2, estimates })
}

/// Forecast of the lower triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast<T> {
    pub m: usize,
    /// `(x, z, claims)` for every future cell, ordered by `x` then `z`.
    pub cells: Vec<(usize, usize, T)>,
    /// Totals for calendar periods `1..m`.
    pub by_calendar_period: Vec<T>,
    pub grand_total: T,
}

impl<T: Scalar> Forecast<T> {
    fn from_cells(m: usize, cells: Vec<(usize, usize, T)>) -> Self {
        let mut by = vec![Vec::new(); m.saturating_sub(1)];
        for &(x, z, v) in &cells {
            by[x + z - m - 2].push(v);
        }
        let by_calendar_period: Vec<T> = by.into_iter().map(compensated_sum).collect();
        let grand_total = compensated_sum(cells.iter().map(|c| c.2));
        Self { m, cells, by_calendar_period, grand_total }
    }

    pub fn cell(&self, x: usize, z: usize) -> Option<T> {
        self.cells.iter().find(|c| c.0 == x && c.1 == z).map(|c| c.2)
    }

    /// CSV `period,claims` with a closing `total` row.
    pub fn write_periods_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["period", "claims"])?;
        for (k, v) in self.by_calendar_period.iter().enumerate() {
            w.write_record([(k + 1).to_string(), v.to_string()])?;
        }
        w.write_record(["total".to_string(), self.grand_total.to_string()])?;
        w.flush()?;
        Ok(())
    }

    /// CSV `x,z,claims` over the future cells.
    pub fn write_cells_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["x", "z", "claims"])?;
        for (x, z, v) in &self.cells {
            w.write_record([x.to_string(), z.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Multiplicative forecast `C f₁(x) f₂(z)` from densities in original
/// orientation, with `C` matching the observed total.
pub fn forecast_from_densities<T: Scalar>(triangle: &RunOffTriangle<T>, f1: &[T], f2: &[T]) -> Result<Forecast<T>> {
    let m = triangle.m();
    if f1.len() != m || f2.len() != m {
        return Err(Error::Validation(format!("densities of length {} and {} for dimension {m}", f1.len(), f2.len())));
    }
    if f1.iter().chain(f2).any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(Error::DegenerateForecast("densities must be finite and non-negative".into()));
    }
    let observed = compensated_sum((1..=m).flat_map(|x| (1..=m + 1 - x).map(move |z| (x, z))).map(|(x, z)| f1[x - 1] * f2[z - 1]));
    if !(observed > T::zero()) {
        return Err(Error::DegenerateForecast("model assigns no mass to the observed triangle".into()));
    }
    let scale = triangle.total() / observed;
    let mut cells = Vec::new();
    for x in 2..=m {
        for z in m + 2 - x..=m {
            cells.push((x, z, scale * f1[x - 1] * f2[z - 1]));
        }
    }
    Ok(Forecast::from_cells(m, cells))
}

/// Multiplicative forecast from component estimates.
pub fn forecast<T: Scalar>(triangle: &RunOffTriangle<T>, estimates: &ComponentEstimates<T>) -> Result<Forecast<T>> {
    forecast_from_densities(triangle, &estimates.underwriting_density(), &estimates.delay_density())
}

/// Chain Ladder: development factors `f_j = Σ C(x, j+1) / Σ C(x, j)` over
/// rows observed at `j + 1`, with `0/0` taken as 1; future cumulative counts
/// are projected row by row.
pub fn chain_ladder<T: Scalar>(triangle: &RunOffTriangle<T>) -> Result<Forecast<T>> {
    let m = triangle.m();
    let cumulative = |x: usize, j: usize| compensated_sum((1..=j).map(|z| triangle.get(x, z)));
    let mut factors = Vec::with_capacity(m.saturating_sub(1));
    for j in 1..m {
        let rows = 1..=m - j;
        let num = compensated_sum(rows.clone().map(|x| cumulative(x, j + 1)));
        let den = compensated_sum(rows.map(|x| cumulative(x, j)));
        if den > T::zero() {
            factors.push(num / den);
        } else if num > T::zero() {
            return Err(Error::DegenerateForecast(format!("development from period {j} starts from zero cumulative claims")));
        } else {
            factors.push(T::one());
        }
    }
    let mut cells = Vec::new();
    for x in 2..=m {
        let last = m + 1 - x;
        let mut c = cumulative(x, last);
        for z in last + 1..=m {
            let next = c * factors[z - 2];
            cells.push((x, z, next - c));
            c = next;
        }
    }
    Ok(Forecast::from_cells(m, cells))
}
