//! Occurrence/exposure data on a uniform time grid.
//!
//! Exposures carry time units (individual-time per cell), so integrals
//! against `Y(s) ds` become plain sums over cells and integrals against
//! `dN(s)` become sums of occurrence counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One individual's filtered observation: at risk on `[entry, exit)`, with an
/// event at `exit` when `event` is set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualRecord<T> {
    pub entry: T,
    pub exit: T,
    pub event: bool,
}

impl<T: Scalar> IndividualRecord<T> {
    pub fn new(entry: T, exit: T, event: bool) -> Self {
        Self { entry, exit, event }
    }
}

/// Aggregated occurrences `O_r` and exposures `Y_r` at grid points
/// `t_r = first + r δ`, `r = 0..R`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSample<T> {
    t0: T,
    t_end: T,
    first: T,
    delta: T,
    occurrences: Vec<T>,
    exposures: Vec<T>,
    n: usize,
}

impl<T: Scalar> GridSample<T> {
    /// Grid with `R = occurrences.len()` interior points `t_r = t0 + r δ`,
    /// `r = 1..=R`, and `δ = (t_end - t0)/(R + 1)`.
    pub fn new(t0: T, t_end: T, occurrences: Vec<T>, exposures: Vec<T>, n: usize) -> Result<Self> {
        let r = occurrences.len();
        if !(t_end > t0) {
            return Err(Error::Validation(format!("empty window [{t0}, {t_end}]")));
        }
        let delta = (t_end - t0) / T::from_count(r + 1);
        Self::with_geometry(t0, t_end, t0 + delta, delta, occurrences, exposures, n)
    }

    /// Grid with explicit first point and spacing.
    pub fn with_geometry(
        t0: T,
        t_end: T,
        first: T,
        delta: T,
        occurrences: Vec<T>,
        exposures: Vec<T>,
        n: usize,
    ) -> Result<Self> {
        let s = Self { t0, t_end, first, delta, occurrences, exposures, n };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.occurrences.len() != self.exposures.len() {
            return Err(Error::Validation(format!(
                "{} occurrences but {} exposures",
                self.occurrences.len(),
                self.exposures.len()
            )));
        }
        if self.occurrences.is_empty() {
            return Err(Error::EmptySample("grid has no cells".into()));
        }
        if !(self.delta > T::zero()) || !self.delta.is_finite() {
            return Err(Error::Validation(format!("grid step {} is not positive", self.delta)));
        }
        if !(self.t_end > self.t0) {
            return Err(Error::Validation(format!("empty window [{}, {}]", self.t0, self.t_end)));
        }
        for (r, (&o, &y)) in self.occurrences.iter().zip(&self.exposures).enumerate() {
            if !o.is_finite() || o < T::zero() {
                return Err(Error::Validation(format!("cell {r}: occurrences {o} not a non-negative number")));
            }
            if !y.is_finite() || y < T::zero() {
                return Err(Error::Validation(format!("cell {r}: exposure {y} not a non-negative number")));
            }
            if o > T::zero() && y == T::zero() {
                return Err(Error::Validation(format!("cell {r}: {o} occurrences with zero exposure")));
            }
        }
        let total: f64 = self.occurrences.iter().map(|o| o.to_f64_lossy()).sum();
        if total > self.n as f64 * (1.0 + 1e-9) {
            return Err(Error::Validation(format!("{total} occurrences exceed n = {}", self.n)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.occurrences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occurrences.is_empty()
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn t_end(&self) -> T {
        self.t_end
    }

    pub fn window(&self) -> (T, T) {
        (self.t0, self.t_end)
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn occurrences(&self) -> &[T] {
        &self.occurrences
    }

    pub fn exposures(&self) -> &[T] {
        &self.exposures
    }

    #[inline]
    pub fn time(&self, r: usize) -> T {
        self.first + self.delta * T::from_count(r)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|r| self.time(r)).collect()
    }

    /// Same geometry and exposures, new occurrences.
    pub fn with_occurrences(&self, occurrences: Vec<T>) -> Result<Self> {
        Self::with_geometry(self.t0, self.t_end, self.first, self.delta, occurrences, self.exposures.clone(), self.n)
    }

    /// Same geometry, occurrences and exposures replaced without the count
    /// check; used for noiseless surrogates whose occurrences are not counts.
    pub fn surrogate(&self, occurrences: Vec<T>) -> Result<Self> {
        let total: f64 = occurrences.iter().map(|o| o.to_f64_lossy()).sum();
        let n = self.n.max(total.ceil() as usize);
        Self::with_geometry(self.t0, self.t_end, self.first, self.delta, occurrences, self.exposures.clone(), n)
    }

    pub fn total_occurrences(&self) -> T {
        crate::scalar::compensated_sum(self.occurrences.iter().copied())
    }

    /// Write as CSV `time,occurrences,exposure`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["time", "occurrences", "exposure"])?;
        for r in 0..self.len() {
            w.write_record([
                self.time(r).to_string(),
                self.occurrences[r].to_string(),
                self.exposures[r].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Weight function `w_r` used in cross-validation scores and errors.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum WeightScheme<T> {
    /// `w Y ≡ 1` on cells with exposure, where `Y` counts individuals at risk.
    #[default]
    UnitProduct,
    /// `w = 1` where exposure exceeds the threshold.
    ExposureSignificant { threshold: T },
    Custom(Vec<T>),
}

impl<T: Scalar> WeightScheme<T> {
    /// Per-cell weights for `sample`.
    pub fn weights(&self, sample: &GridSample<T>) -> Result<Vec<T>> {
        match self {
            WeightScheme::UnitProduct => Ok(sample
                .exposures()
                .iter()
                .map(|&y| if y > T::zero() { sample.delta() / y } else { T::zero() })
                .collect()),
            WeightScheme::ExposureSignificant { threshold } => Ok(sample
                .exposures()
                .iter()
                .map(|&y| if y > *threshold { T::one() } else { T::zero() })
                .collect()),
            WeightScheme::Custom(w) => {
                if w.len() != sample.len() {
                    return Err(Error::Validation(format!(
                        "{} custom weights for {} cells",
                        w.len(),
                        sample.len()
                    )));
                }
                if let Some((r, x)) = w.iter().enumerate().find(|(_, x)| !x.is_finite() || **x < T::zero()) {
                    return Err(Error::Validation(format!("weight {r} = {x} is not finite and non-negative")));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Aggregate individual records into `cells` cells of equal width covering
/// `window`, with grid points at the cell midpoints.
///
/// Exposure is the length of `[entry, exit)` inside each cell. An event is
/// counted in the cell containing `exit`; an exit on a cell boundary belongs
/// to the left cell.
pub fn aggregate<T: Scalar>(records: &[IndividualRecord<T>], window: (T, T), cells: usize) -> Result<GridSample<T>> {
    let (t0, t_end) = window;
    if cells < 2 {
        return Err(Error::Config(format!("grid needs at least 2 cells, got {cells}")));
    }
    if !(t_end > t0) {
        return Err(Error::Config(format!("empty window [{t0}, {t_end}]")));
    }
    let width = (t_end - t0) / T::from_count(cells);
    let mut occ = vec![T::zero(); cells];
    let mut exp = vec![T::zero(); cells];
    let edge = |k: usize| if k == cells { t_end } else { t0 + width * T::from_count(k) };
    for (i, rec) in records.iter().enumerate() {
        if !rec.entry.is_finite() || !rec.exit.is_finite() {
            return Err(Error::Ingestion { index: i, reason: "non-finite time".into() });
        }
        if !(rec.exit > rec.entry) {
            return Err(Error::Ingestion { index: i, reason: format!("exit {} not after entry {}", rec.exit, rec.entry) });
        }
        if rec.entry < t0 || rec.exit > t_end {
            return Err(Error::Ingestion {
                index: i,
                reason: format!("[{}, {}] outside window [{t0}, {t_end}]", rec.entry, rec.exit),
            });
        }
        let first = cell_index(rec.entry, t0, width, cells, false);
        let last = cell_index(rec.exit, t0, width, cells, true);
        for (k, slot) in exp.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = rec.entry.max(edge(k));
            let hi = rec.exit.min(edge(k + 1));
            if hi > lo {
                *slot += hi - lo;
            }
        }
        if rec.event {
            occ[last] += T::one();
        }
    }
    GridSample::with_geometry(t0, t_end, t0 + width * T::lit(0.5), width, occ, exp, records.len())
}

/// Cell containing `x`; with `closed_right`, boundary points go to the left cell.
fn cell_index<T: Scalar>(x: T, t0: T, width: T, cells: usize, closed_right: bool) -> usize {
    let pos = ((x - t0) / width).to_f64_lossy();
    let idx = if closed_right { pos.ceil() - 1.0 } else { pos.floor() };
    idx.clamp(0.0, (cells - 1) as f64) as usize
}

#[derive(Debug, Deserialize)]
struct GridRow {
    time: String,
    occurrences: String,
    exposure: String,
}

#[derive(Debug, Deserialize)]
struct RecordRow {
    entry: String,
    exit: String,
    event: String,
}

pub(crate) fn parse_num<T: Scalar>(field: &str, what: &str, line: usize) -> Result<T> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, reason: format!("{what} '{field}' is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, reason: format!("{what} '{field}' is not finite") });
    }
    Ok(T::lit(v))
}

pub(crate) fn line_of(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

/// Read a grid sample from CSV `time,occurrences,exposure`.
///
/// Times must be equally spaced (to `1e-9` relative). The window extends
/// half a step beyond the first and last time. The sample size is the
/// total number of occurrences.
pub fn read_grid_csv<T: Scalar, R: std::io::Read>(input: R) -> Result<GridSample<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut times = Vec::new();
    let mut occ = Vec::new();
    let mut exp = Vec::new();
    let mut lines = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        let row: GridRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        times.push(parse_num::<f64>(&row.time, "time", line)?);
        let o: T = parse_num(&row.occurrences, "occurrences", line)?;
        let y: T = parse_num(&row.exposure, "exposure", line)?;
        if o < T::zero() || y < T::zero() {
            return Err(Error::Validation(format!("line {line}: negative occurrences or exposure")));
        }
        if o > T::zero() && y == T::zero() {
            return Err(Error::Validation(format!("line {line}: {o} occurrences with zero exposure")));
        }
        occ.push(o);
        exp.push(y);
        lines.push(line);
    }
    if times.is_empty() {
        return Err(Error::EmptySample("no data rows".into()));
    }
    let delta = if times.len() > 1 { (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64 } else { 1.0 };
    if !(delta > 0.0) {
        return Err(Error::Validation("times must be strictly increasing".into()));
    }
    for (k, t) in times.iter().enumerate() {
        let expected = times[0] + delta * k as f64;
        if (t - expected).abs() > 1e-9 * t.abs().max(delta) {
            return Err(Error::Validation(format!("line {}: time {t} breaks uniform spacing {delta}", lines[k])));
        }
    }
    let total: f64 = occ.iter().map(|o| o.to_f64_lossy()).sum();
    let n = (total.ceil() as usize).max(1);
    let half = delta / 2.0;
    GridSample::with_geometry(
        T::lit(times[0] - half),
        T::lit(times[times.len() - 1] + half),
        T::lit(times[0]),
        T::lit(delta),
        occ,
        exp,
        n,
    )
}

pub fn load_grid_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<GridSample<T>> {
    read_grid_csv(std::fs::File::open(path)?)
}

/// Read individual records from CSV `entry,exit,event` with `event` in {0, 1}.
pub fn read_records_csv<T: Scalar, R: std::io::Read>(input: R) -> Result<Vec<IndividualRecord<T>>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        let row: RecordRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::Parse { line, reason: e.to_string() })?;
        let entry = parse_num(&row.entry, "entry", line)?;
        let exit = parse_num(&row.exit, "exit", line)?;
        let event = match row.event.trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Parse { line, reason: format!("event '{other}' is not 0 or 1") }),
        };
        if !(exit > entry) || entry < T::zero() {
            return Err(Error::Validation(format!("line {line}: need 0 <= entry < exit")));
        }
        out.push(IndividualRecord { entry, exit, event });
    }
    Ok(out)
}

pub fn load_records_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<IndividualRecord<T>>> {
    read_records_csv(std::fs::File::open(path)?)
}

/// Read one weight per row from CSV with a `weight` column.
pub fn read_weights_csv<T: Scalar, R: std::io::Read>(input: R) -> Result<WeightScheme<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "weight")
        .ok_or_else(|| Error::Parse { line: 1, reason: "missing 'weight' column".into() })?;
    let mut w = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = line_of(&rec, i + 2);
        let v: T = parse_num(rec.get(col).unwrap_or(""), "weight", line)?;
        if v < T::zero() {
            return Err(Error::Parse { line, reason: format!("negative weight {v}") });
        }
        w.push(v);
    }
    Ok(WeightScheme::Custom(w))
}

pub fn load_weights_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<WeightScheme<T>> {
    read_weights_csv(std::fs::File::open(path)?)
}

/// Load either schema, chosen by the header: records are aggregated into
/// `cells` cells over `[min entry, max exit]`.
pub fn load_sample_csv<T: Scalar>(path: impl AsRef<Path>, cells: usize) -> Result<GridSample<T>> {
    let text = std::fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or("");
    if header.split(',').any(|h| h.trim() == "entry") {
        let records: Vec<IndividualRecord<T>> = read_records_csv(text.as_bytes())?;
        if records.is_empty() {
            return Err(Error::EmptySample("no records".into()));
        }
        let lo = records.iter().map(|r| r.entry).fold(T::infinity(), T::min);
        let hi = records.iter().map(|r| r.exit).fold(T::neg_infinity(), T::max);
        aggregate(&records, (lo, hi), cells)
    } else {
        read_grid_csv(text.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(l: f64, z: f64, e: bool) -> IndividualRecord<f64> {
        IndividualRecord::new(l, z, e)
    }

    #[test]
    fn empty_records_give_zero_grid() {
        let g = aggregate::<f64>(&[], (0.0, 1.0), 4).unwrap();
        assert!(g.occurrences().iter().all(|&o| o == 0.0));
        assert!(g.exposures().iter().all(|&y| y == 0.0));
    }

    #[test]
    fn full_record_terminal_event() {
        let g = aggregate(&[rec(0.0, 2.0, true)], (0.0, 2.0), 4).unwrap();
        assert_eq!(g.exposures(), &[0.5, 0.5, 0.5, 0.5]);
        assert_eq!(g.occurrences(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.delta(), 0.5);
        assert_eq!(g.time(0), 0.25);
    }

    #[test]
    fn hand_built_overlaps() {
        // Cells of width 1 on [0, 5].
        let recs = [rec(0.5, 2.0, true), rec(1.25, 4.5, false), rec(3.0, 3.5, true)];
        let g = aggregate(&recs, (0.0, 5.0), 5).unwrap();
        assert_eq!(g.exposures(), &[0.5, 1.75, 1.0, 1.5, 0.5]);
        // exit 2.0 sits on the boundary between cells 1 and 2: left cell.
        assert_eq!(g.occurrences(), &[0.0, 1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn outside_window_reports_index() {
        let err = aggregate(&[rec(0.0, 1.0, true), rec(0.5, 3.0, true)], (0.0, 2.0), 4).unwrap_err();
        assert!(matches!(err, Error::Ingestion { index: 1, .. }));
    }

    #[test]
    fn unit_product_weights() {
        let g = GridSample::new(0.0, 4.0, vec![0.0, 1.0, 0.0], vec![2.0, 0.5, 0.0], 3).unwrap();
        let w = WeightScheme::UnitProduct.weights(&g).unwrap();
        assert_eq!(w, vec![0.5, 2.0, 0.0]);
    }

    #[test]
    fn validation_rejects_events_without_exposure() {
        assert!(GridSample::new(0.0, 1.0, vec![1.0, 0.0], vec![0.0, 1.0], 5).is_err());
        assert!(GridSample::new(0.0, 1.0, vec![3.0, 0.0], vec![1.0, 1.0], 2).is_err());
    }

    #[test]
    fn grid_csv_roundtrip() {
        let text = "time,occurrences,exposure\n40,3,100.5\n41,5,98\n42,0,97\n";
        let g: GridSample<f64> = read_grid_csv(text.as_bytes()).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.delta(), 1.0);
        assert_eq!(g.window(), (39.5, 42.5));
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back: GridSample<f64> = read_grid_csv(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn grid_csv_errors() {
        let hdr = "time,occurrences,exposure\n";
        assert!(matches!(read_grid_csv::<f64, _>(hdr.as_bytes()), Err(Error::EmptySample(_))));
        let bad = format!("{hdr}1,1,1\n2,x,1\n");
        assert!(matches!(read_grid_csv::<f64, _>(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        let zero = format!("{hdr}1,1,1\n2,2,0\n");
        match read_grid_csv::<f64, _>(zero.as_bytes()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let uneven = format!("{hdr}1,1,1\n2,0,1\n4,0,1\n");
        assert!(matches!(read_grid_csv::<f64, _>(uneven.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn records_csv() {
        let text = "entry,exit,event\n0,1.5,1\n0.2,3,0\n";
        let r: Vec<IndividualRecord<f64>> = read_records_csv(text.as_bytes()).unwrap();
        assert_eq!(r, vec![rec(0.0, 1.5, true), rec(0.2, 3.0, false)]);
        let bad = "entry,exit,event\n0,1.5,2\n";
        assert!(matches!(read_records_csv::<f64, _>(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
