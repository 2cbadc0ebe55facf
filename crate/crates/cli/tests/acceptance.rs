//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kernel_hazard::constants::{psi_table, rho_ll, rho_mbc};
use kernel_hazard::estimators::{estimate, local_linear_weights, stochastic_moments};
use kernel_hazard::forecasting::{chain_ladder, fit_components, forecast, forecast_from_densities};
use kernel_hazard::selection::{cv_score, select_bo, select_oscv};
use kernel_hazard::simulation::{
    generate, mise_optimal_bandwidth, study, ExpectedExposure, HazardModel, ModelConfig, ModelSpec, SimulationConfig,
    StudyMethod, Truncation,
};
use kernel_hazard::{
    BandwidthGrid, BuiltinKernel, Error, Estimator, EstimatorKind, GridSample, Kernel, RunOffTriangle, Side, SideMode,
    WeightScheme,
};

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self { pass, summary: summary.into(), details: Vec::new() }
    }
}

// Closed-form kernels and quadrature used as oracles.

fn base_kernel(k: BuiltinKernel, u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    let s = 1.0 - u * u;
    match k {
        BuiltinKernel::Epanechnikov => 0.75 * s,
        BuiltinKernel::Quartic => 15.0 / 16.0 * s * s,
        BuiltinKernel::Sextic => 3003.0 / 2048.0 * s.powi(6),
    }
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite 8-point rule on `panels` equal panels of each piece.
fn composite(f: &dyn Fn(f64) -> f64, pieces: &[(f64, f64)], panels: usize, gl: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for &(a, b) in pieces {
        let h = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            let mid = lo + h / 2.0;
            total += gl.iter().map(|(x, w)| w * f(mid + h / 2.0 * x)).sum::<f64>() * h / 2.0;
        }
    }
    total
}

/// Panel doubling until successive values agree to `tol` (relative).
fn doubled(f: &dyn Fn(f64) -> f64, pieces: &[(f64, f64)], tol: f64) -> f64 {
    let gl = gauss_legendre(8);
    let mut panels = 1;
    let mut prev = composite(f, pieces, panels, &gl);
    loop {
        panels *= 2;
        let next = composite(f, pieces, panels, &gl);
        if (next - prev).abs() <= tol * next.abs().max(1e-300) || panels >= 1 << 14 {
            return next;
        }
        prev = next;
    }
}

struct OracleKernel {
    f: Box<dyn Fn(f64) -> f64>,
    support: (f64, f64),
    /// Points where the kernel or a derivative may jump.
    breaks: Vec<f64>,
}

impl OracleKernel {
    fn pieces(&self) -> Vec<(f64, f64)> {
        let mut pts = vec![self.support.0, self.support.1];
        pts.extend(self.breaks.iter().copied().filter(|b| *b > self.support.0 && *b < self.support.1));
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn moment(&self, j: i32) -> f64 {
        doubled(&|u| u.powi(j) * (self.f)(u), &self.pieces(), 1e-13)
    }

    fn roughness(&self) -> f64 {
        doubled(&|u| (self.f)(u).powi(2), &self.pieces(), 1e-13)
    }

    /// `2L - L*L` with the convolution by inner quadrature.
    fn twicing(self) -> OracleKernel {
        let (a, b) = self.support;
        let f = std::rc::Rc::new(self.f);
        let inner_pieces = self.breaks.clone();
        let g = f.clone();
        let conv = move |x: f64| {
            let lo = a.max(x - b);
            let hi = b.min(x - a);
            if hi <= lo {
                return 0.0;
            }
            let mut pts = vec![lo, hi];
            for &c in &inner_pieces {
                for p in [c, x - c] {
                    if p > lo && p < hi {
                        pts.push(p);
                    }
                }
            }
            pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let pieces: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
            composite(&|u| g(u) * g(x - u), &pieces, 4, &gauss_legendre(16))
        };
        let mut breaks = vec![2.0 * a, a + b, 2.0 * b, a, b];
        for &c in &self.breaks {
            breaks.extend([c, c + a, c + b, 2.0 * c]);
        }
        OracleKernel { f: Box::new(move |x| 2.0 * f(x) - conv(x)), support: (2.0 * a, 2.0 * b), breaks }
    }
}

fn oracle_symmetric(k: BuiltinKernel) -> OracleKernel {
    OracleKernel { f: Box::new(move |u| base_kernel(k, u)), support: (-1.0, 1.0), breaks: vec![0.0] }
}

/// Equivalent kernel of the left one-sided kernel `2K` on `[-1, 0]`.
fn oracle_left_equivalent(k: BuiltinKernel) -> OracleKernel {
    let one = OracleKernel {
        f: Box::new(move |u| if (-1.0..=0.0).contains(&u) { 2.0 * base_kernel(k, u) } else { 0.0 }),
        support: (-1.0, 0.0),
        breaks: vec![],
    };
    let (m1, m2) = (one.moment(1), one.moment(2));
    let f = one.f;
    OracleKernel {
        f: Box::new(move |u| (m2 - m1 * u) / (m2 - m1 * m1) * f(u)),
        support: (-1.0, 0.0),
        breaks: vec![],
    }
}

fn oracle_rho(k: BuiltinKernel) -> (f64, f64) {
    let sym = oracle_symmetric(k);
    let eq = oracle_left_equivalent(k);
    let (mk, rk) = (sym.moment(2), sym.roughness());
    let (ml, rl) = (eq.moment(2), eq.roughness());
    let ll = (rk / rl * ml * ml / (mk * mk)).powf(0.2);
    let rgk = sym.twicing().roughness();
    let rgl = eq.twicing().roughness();
    let mbc = (rgk / rgl * ml.powi(4) / mk.powi(4)).powf(1.0 / 9.0);
    (ll, mbc)
}

// Naive estimators on a grid used as brute-force oracles.

#[derive(Clone)]
struct Grid {
    t: Vec<f64>,
    delta: f64,
    o: Vec<f64>,
    y: Vec<f64>,
    n: usize,
}

impl Grid {
    fn sample(&self) -> GridSample {
        let t0 = self.t[0] - self.delta;
        let t_end = t0 + self.delta * (self.t.len() + 1) as f64;
        GridSample::new(t0, t_end, self.o.clone(), self.y.clone(), self.n).unwrap()
    }
}

type KernelFn = dyn Fn(f64) -> f64;

/// Local linear value at `t_r` with kernel `k` evaluated at `(t_q - t_r)/b`;
/// `None` where the moments are degenerate.
fn naive_ll(g: &Grid, o: &[f64], r: usize, b: f64, k: &KernelFn) -> Option<f64> {
    let mut a = [0.0; 3];
    for q in 0..g.t.len() {
        let d = g.t[r] - g.t[q];
        let kv = k(-d / b) / b * g.y[q];
        a[0] += kv;
        a[1] += kv * d;
        a[2] += kv * d * d;
    }
    let det = a[0] * a[2] - a[1] * a[1];
    if !(a[0] > 0.0 && det > 1e-10 * a[0] * a[2]) {
        return None;
    }
    Some((0..g.t.len()).map(|q| {
        let d = g.t[r] - g.t[q];
        (a[2] - a[1] * d) / det * k(-d / b) / b * o[q]
    }).sum())
}

fn naive_mbc(g: &Grid, o: &[f64], r: usize, b: f64, k: &KernelFn) -> Option<f64> {
    let pilot: Vec<f64> = (0..g.t.len()).map(|q| naive_ll(g, o, q, b, k).unwrap_or(0.0)).collect();
    let pmax = pilot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    naive_ll(g, o, r, b, k)?;
    if !(pmax > 0.0) {
        return Some(0.0);
    }
    let floor = 1e-12 * pmax;
    let usable = |q: usize| pilot[q] >= floor && pilot[q] > 0.0;
    let mut a = [0.0; 3];
    for q in (0..g.t.len()).filter(|&q| usable(q)) {
        let d = g.t[r] - g.t[q];
        let kv = k(-d / b) / b * g.y[q] * pilot[q] * pilot[q];
        a[0] += kv;
        a[1] += kv * d;
        a[2] += kv * d * d;
    }
    let det = a[0] * a[2] - a[1] * a[1];
    if !(a[0] > 0.0 && det > 1e-10 * a[0] * a[2]) {
        return None;
    }
    if !usable(r) {
        return Some(0.0);
    }
    let s: f64 = (0..g.t.len())
        .filter(|&q| usable(q))
        .map(|q| {
            let d = g.t[r] - g.t[q];
            (a[2] - a[1] * d) / det * k(-d / b) / b * pilot[q] * o[q]
        })
        .sum();
    Some(pilot[r] * s)
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum Naive {
    Ll,
    Mbc,
    BoLl,
}

/// Brute-force cross-validation: every occurrence removed in turn and the
/// estimator refitted from scratch.
fn brute_force_cv(g: &Grid, b: f64, kind: Naive, k: BuiltinKernel) -> Option<f64> {
    let sym = move |u: f64| base_kernel(k, u);
    let left = move |u: f64| if (-1.0..=0.0).contains(&u) { if u == 0.0 { base_kernel(k, 0.0) } else { 2.0 * base_kernel(k, u) } } else { 0.0 };
    let right = move |u: f64| if (0.0..=1.0).contains(&u) { if u == 0.0 { base_kernel(k, 0.0) } else { 2.0 * base_kernel(k, u) } } else { 0.0 };
    let eps = 1e-9 * g.delta;
    let xi = |o: &[f64], r: usize| {
        let t = g.t[r];
        let l: f64 = (0..g.t.len()).filter(|&q| g.t[q] >= t - b - eps && g.t[q] <= t + eps).map(|q| o[q]).sum();
        let rr: f64 = (0..g.t.len()).filter(|&q| g.t[q] >= t - eps && g.t[q] <= t + b + eps).map(|q| o[q]).sum();
        l > rr
    };
    let value = |o: &[f64], r: usize| -> Option<f64> {
        match kind {
            Naive::Ll => naive_ll(g, o, r, b, &sym),
            Naive::Mbc => naive_mbc(g, o, r, b, &sym),
            Naive::BoLl => {
                if xi(o, r) {
                    naive_ll(g, o, r, b, &left)
                } else {
                    naive_ll(g, o, r, b, &right)
                }
            }
        }
    };
    let w: Vec<f64> = g.y.iter().map(|&y| if y > 0.0 { g.delta / y } else { 0.0 }).collect();
    let mut first = 0.0;
    let mut second = 0.0;
    let mut any = false;
    for r in 0..g.t.len() {
        let Some(v) = value(&g.o, r) else { continue };
        any = true;
        first += v * v * g.y[r] * w[r];
        if g.o[r] > 0.0 {
            let mut o = g.o.clone();
            o[r] -= 1.0;
            second += value(&o, r).unwrap_or(0.0) * w[r] * g.o[r];
        }
    }
    any.then(|| (first - 2.0 * second) / g.n as f64)
}

fn random_grid(rng: &mut ChaCha8Rng, max_cells: usize, max_n: usize) -> Grid {
    let cells = rng.random_range(4..=max_cells);
    let n = rng.random_range(2..=max_n);
    let delta = 1.0 / (cells + 1) as f64;
    let mut at_risk = n;
    let mut o = Vec::new();
    let mut y = Vec::new();
    for _ in 0..cells {
        let events = rng.random_range(0..=at_risk.min(2));
        y.push(at_risk as f64 * delta);
        o.push(events as f64);
        at_risk -= events;
    }
    Grid { t: (1..=cells).map(|r| r as f64 * delta).collect(), delta, o, y, n }
}

// Criteria.

const REFERENCE_PSI: [(Estimator, BuiltinKernel, [f64; 4]); 6] = [
    (Estimator::Ll, BuiltinKernel::Epanechnikov, [1.09, 1.09, 3.6, 0.36]),
    (Estimator::Ll, BuiltinKernel::Quartic, [0.95, 0.95, 2.86, 0.46]),
    (Estimator::Ll, BuiltinKernel::Sextic, [1.18, 1.18, 3.49, 0.59]),
    (Estimator::Mbc, BuiltinKernel::Epanechnikov, [4.41, 4.41, 9.87, 0.84]),
    (Estimator::Mbc, BuiltinKernel::Quartic, [2.44, 2.44, 6.10, 0.95]),
    (Estimator::Mbc, BuiltinKernel::Sextic, [2.05, 2.05, 6.50, 1.31]),
];

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let rows = psi_table(&BuiltinKernel::ALL).expect("psi table");
    let elapsed = start.elapsed().as_secs_f64();
    let mut details = Vec::new();
    let mut within = 0;
    let mut bo_do = true;
    for (est, k, target) in REFERENCE_PSI {
        let row = rows.iter().find(|r| r.estimator == est && r.kernel == k.name()).expect("row");
        let got = [row.bo, row.dox, row.cv, row.mise];
        bo_do &= (row.bo - row.dox).abs() <= 1e-9 * row.bo;
        for (name, (g, t)) in ["BO", "DO", "CV", "MISE"].iter().zip(got.iter().zip(target)) {
            if (g - t).abs() <= 0.02 {
                within += 1;
            } else {
                details.push(format!("{est} {} {name}: computed {g:.4}, reference {t:.2}", k.name()));
            }
        }
    }
    let pass = within == 24 && bo_do && elapsed < 60.0;
    let mut o = Outcome::new(pass, format!("{within}/24 entries within 0.02, BO = DO: {bo_do}, {elapsed:.1} s"));
    o.details = details;
    o
}

fn criterion_2() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for k in BuiltinKernel::ALL {
        let (ll, mbc) = oracle_rho(k);
        let kern = Kernel::builtin(k);
        let got_ll: f64 = rho_ll(&kern).expect("rho ll");
        let got_mbc: f64 = rho_mbc(&kern).expect("rho mbc");
        let e1 = (got_ll - ll).abs() / ll;
        let e2 = (got_mbc - mbc).abs() / mbc;
        details.push(format!("{}: rho_LL {got_ll:.8} vs {ll:.8}, rho_MBC {got_mbc:.8} vs {mbc:.8}", k.name()));
        worst = worst.max(e1).max(e2);
    }
    let mut o = Outcome::new(worst <= 1e-6, format!("max relative deviation from quadrature oracle {worst:.2e}"));
    o.details = details;
    o
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kernels = [BuiltinKernel::Epanechnikov, BuiltinKernel::Quartic, BuiltinKernel::Sextic];
    let (mut worst0, mut worst1) = (0.0f64, 0.0f64);
    let mut checked = 0usize;
    let mut worst_kappa = 1.0f64;
    for _ in 0..100 {
        let cells = rng.random_range(5..=60);
        let delta = 1.0 / (cells + 1) as f64;
        let y: Vec<f64> = (0..cells).map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..5.0) }).collect();
        let o: Vec<f64> = y.iter().map(|&v| if v > 0.0 { rng.random_range(0..4) as f64 } else { 0.0 }).collect();
        let n = o.iter().sum::<f64>() as usize + 1;
        let s = GridSample::new(0.0, 1.0, o, y.clone(), n).unwrap();
        let base = Kernel::builtin(kernels[rng.random_range(0..3)]);
        let kern = match rng.random_range(0..3) {
            0 => base,
            1 => base.one_sided(Side::Left).unwrap(),
            _ => base.one_sided(Side::Right).unwrap(),
        };
        let b = rng.random_range(1.05 * delta..0.5);
        for r in 0..cells {
            let Some(w) = local_linear_weights(&s, r, b, &kern).unwrap() else { continue };
            // Grid offsets are exact multiples of the spacing.
            let off = |q: usize| (r as f64 - q as f64) * delta;
            let m0: f64 = w.iter().map(|(q, wq)| wq * y[*q]).sum();
            let m1: f64 = w.iter().map(|(q, wq)| wq * off(*q) * y[*q]).sum();
            let scale0: f64 = w.iter().map(|(q, wq)| (wq * y[*q]).abs()).sum();
            // Every offset in the window is at most b.
            let scale1 = b * scale0;
            // Rounding in the moments is amplified by the conditioning of
            // the local 2x2 system.
            let (a0, a1, a2) = stochastic_moments(&s, s.time(r), b, &kern, None).unwrap();
            let kappa = (a0 * a2 / (a0 * a2 - a1 * a1)).max(1.0);
            worst0 = worst0.max((m0 - 1.0).abs() / scale0 / kappa);
            worst1 = worst1.max(m1.abs() / scale1 / kappa);
            worst_kappa = worst_kappa.max(kappa);
            checked += 1;
        }
    }
    let tol = 64.0 * f64::EPSILON;
    Outcome::new(
        worst0 <= tol && worst1 <= tol,
        format!("{checked} cells on 100 samples; max |ΣK̄Y - 1| {worst0:.1e}, max |ΣK̄(t-t_q)Y| {worst1:.1e} (relative to κ·Σ|K̄Y| and κ·b·Σ|K̄Y|, tol {tol:.1e}, max κ {worst_kappa:.1e})"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut ll_c, mut ll_l, mut bo_c, mut mbc_c) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..20 {
        let cells = rng.random_range(40..=120);
        let y: Vec<f64> = (0..cells).map(|_| rng.random_range(0.5..20.0)).collect();
        let delta = 1.0 / (cells + 1) as f64;
        let c = rng.random_range(0.5..4.0);
        let slope = rng.random_range(-0.4..2.0);
        let kern = Kernel::builtin(BuiltinKernel::ALL[rng.random_range(0..3)]);
        let b = rng.random_range(3.0 * delta..0.2);
        let mk = |alpha: &dyn Fn(f64) -> f64| {
            let o: Vec<f64> = (0..cells).map(|r| alpha((r + 1) as f64 * delta) * y[r]).collect();
            let n = o.iter().sum::<f64>().ceil() as usize + 1;
            GridSample::new(0.0, 1.0, o, y.clone(), n).unwrap()
        };
        let reach = (b / delta).ceil() as usize + 1;
        let interior = reach..cells.saturating_sub(reach);
        let constant = mk(&|_| c);
        let linear = mk(&|t| c + slope * t);
        let rel = |v: f64, t: f64| (v - t).abs() / t.abs();
        let e = estimate(&constant, b, &kern, EstimatorKind::Ll, SideMode::Occurrence).unwrap();
        let l = estimate(&linear, b, &kern, EstimatorKind::Ll, SideMode::Occurrence).unwrap();
        let bo = estimate(&constant, b, &kern, EstimatorKind::BoLl, SideMode::Occurrence).unwrap();
        let m = estimate(&constant, b, &kern, EstimatorKind::Mbc, SideMode::Occurrence).unwrap();
        for r in interior.clone() {
            let t = (r + 1) as f64 * delta;
            ll_c = ll_c.max(rel(e.raw[r], c));
            ll_l = ll_l.max(rel(l.raw[r], c + slope * t));
            bo_c = bo_c.max(rel(bo.raw[r], c));
            mbc_c = mbc_c.max(rel(m.raw[r], c));
        }
    }
    let pass = ll_c <= 1e-10 && ll_l <= 1e-10 && bo_c <= 1e-10 && mbc_c <= 1e-12;
    Outcome::new(
        pass,
        format!("max relative error: LL constant {ll_c:.1e}, LL linear {ll_l:.1e}, BO-LL constant {bo_c:.1e}, MBC constant {mbc_c:.1e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut details = Vec::new();
    let kinds = [(Naive::Ll, EstimatorKind::Ll), (Naive::Mbc, EstimatorKind::Mbc), (Naive::BoLl, EstimatorKind::BoLl)];
    while done < 50 {
        let g = random_grid(&mut rng, 12, 20);
        if g.o.iter().sum::<f64>() == 0.0 {
            continue;
        }
        let k = BuiltinKernel::ALL[rng.random_range(0..3)];
        let b = rng.random_range(1.3 * g.delta..0.7);
        let s = g.sample();
        let mut compared = false;
        for (naive, kind) in kinds {
            let lib = cv_score(&s, b, kind, &Kernel::builtin(k), &WeightScheme::UnitProduct, SideMode::Occurrence);
            let oracle = brute_force_cv(&g, b, naive, k);
            match (lib, oracle) {
                (Ok(v), Some(t)) => {
                    let e = (v - t).abs() / t.abs().max(1.0);
                    if e > 1e-10 {
                        details.push(format!("{kind:?} b={b:.4}: library {v:.12e}, brute force {t:.12e}"));
                    }
                    worst = worst.max(e);
                    compared = true;
                }
                (Err(Error::ScoreUndefined { .. }) | Err(Error::DegeneratePilot), None) => {}
                (Err(Error::DegeneratePilot), Some(_)) if naive == Naive::Mbc => {}
                (l, o) => details.push(format!("{kind:?} b={b:.4}: library {l:?}, brute force {o:?}")),
            }
        }
        if compared {
            done += 1;
        }
    }
    let mut o = Outcome::new(worst <= 1e-10 && details.is_empty(), format!("50 samples, LL/MBC/BO-LL, max deviation {worst:.1e}"));
    o.details = details;
    o
}

fn criterion_6() -> Outcome {
    let square = HazardModel::custom(|t| t * t, |_| 2.0, (0.0, 1.0)).unwrap();
    let epa = Kernel::builtin(BuiltinKernel::Epanechnikov);
    let c0 = mise_optimal_bandwidth(&square, &epa, Estimator::Ll, &ExpectedExposure::constant(1.0), 1, |_| 1.0).unwrap();
    let expect = 1.25f64.powf(0.2);
    let decay = HazardModel::new(ModelSpec::ExponentialDecay { level: 1.0, rate: 1.0 }, (0.0, 1.0)).unwrap();
    let mbc = mise_optimal_bandwidth(&decay, &epa, Estimator::Mbc, &ExpectedExposure::constant(1.0), 100, |_| 1.0);
    let unbounded = matches!(mbc, Err(Error::UnboundedBandwidth(_)));
    Outcome::new(
        (c0 - expect).abs() <= 1e-6 && unbounded,
        format!("C0 = {c0:.9} (closed form {expect:.9}); MBC on exp(-t) unbounded: {unbounded}"),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut cfg = SimulationConfig::new(ModelConfig::Preset { preset: "model5".into() }, 50_000);
    cfg.grid_size = 500;
    cfg.truncation = Truncation::None;
    cfg.replications = 50;
    cfg.seed = 7;
    let grid: BandwidthGrid = cfg.bandwidth_grid().unwrap();
    let kern = Kernel::builtin(cfg.kernel);
    let unit = WeightScheme::UnitProduct;
    let mut pass = true;
    let mut details = Vec::new();
    let mut examples = Vec::new();
    for est in [Estimator::Ll, Estimator::Mbc] {
        let mut flagged = 0;
        let mut matched = 0;
        for rep in 0..cfg.replications as u64 {
            let s: GridSample = generate(&cfg, rep).unwrap();
            let left = select_oscv(&s, &grid, est, &kern, Side::Left, &unit).unwrap();
            let right = select_oscv(&s, &grid, est, &kern, Side::Right, &unit).unwrap();
            if left.diagnostics.minimum_at_grid_edge || left.bandwidth > 5.0 * right.bandwidth {
                flagged += 1;
                let bo = select_bo(&s, &grid, est, &kern, &unit, cfg.side_mode).unwrap();
                if bo.bandwidth == right.bandwidth {
                    matched += 1;
                } else if examples.len() < 6 {
                    examples.push(format!("{est} rep {rep}: BO {:.4}, right {:.4}, left {:.4}", bo.bandwidth, right.bandwidth, left.bandwidth));
                }
            }
        }
        let ok = flagged * 100 >= 60 * cfg.replications && matched == flagged;
        pass &= ok;
        details.push(format!("{est}: left flagged in {flagged}/50 (need 30), BO = right in {matched}/{flagged}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 1800.0;
    details.extend(examples);
    let mut o = Outcome::new(pass, format!("LL and MBC, {elapsed:.0} s"));
    o.details = details;
    o
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut cfg = SimulationConfig::new(ModelConfig::Preset { preset: "model2".into() }, 1000);
    cfg.grid_size = 500;
    cfg.truncation = Truncation::Uniform;
    cfg.replications = 200;
    cfg.seed = 8;
    cfg.estimator = Estimator::Mbc;
    let report = study::<f64>(&cfg).unwrap();
    let row = report.row(StudyMethod::Bo);
    let rerr = row.rerr;
    Outcome::new(
        rerr.is_some_and(|r| r > 1.0),
        format!("Rerr(BO) = {} for MBC, {:.0} s", rerr.map(|r| format!("{r:.3}")).unwrap_or("degenerate".into()), start.elapsed().as_secs_f64()),
    )
}

fn criterion_9() -> Outcome {
    let f1 = |x: usize| if x <= 6 { 4.0 } else if x <= 13 { 6.0 } else { 2.5 };
    let f2 = |z: usize| if z <= 2 { 9.0 } else if z <= 8 { 3.0 } else { 0.4 };
    let tri = RunOffTriangle::from_fn(20, |x, z| 25.0 * f1(x) * f2(z)).unwrap();
    // Bandwidth just above the unit grid spacing: the local linear fit
    // reduces to occurrences over exposure at each cell.
    let b = 1.0 + 1e-9;
    let est = fit_components(&tri, (b, b), &Kernel::builtin(BuiltinKernel::Epanechnikov), EstimatorKind::Ll, SideMode::Occurrence).unwrap();
    let kf = forecast(&tri, &est).unwrap();
    let cl = chain_ladder(&tri).unwrap();
    let worst = kf.cells.iter().zip(&cl.cells).map(|(a, c)| (a.2 - c.2).abs() / c.2.abs()).fold(0.0, f64::max);
    let d1 = est.underwriting_density();
    let d2 = est.delay_density();
    let base = forecast_from_densities(&tri, &d1, &d2).unwrap();
    let scaled = forecast_from_densities(
        &tri,
        &d1.iter().map(|v| v * 3.7).collect::<Vec<_>>(),
        &d2.iter().map(|v| v * 0.02).collect::<Vec<_>>(),
    )
    .unwrap();
    let inv = base.cells.iter().zip(&scaled.cells).map(|(a, c)| (a.2 - c.2).abs() / a.2.abs().max(1e-300)).fold(0.0, f64::max);
    Outcome::new(
        worst <= 1e-6 && inv <= 1e-12,
        format!("max per-cell relative gap to Chain Ladder {worst:.1e}; scaling invariance {inv:.1e}"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_kernel-hazard"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> bool {
    names.iter().all(|n| match (std::fs::read(a.join(n)), std::fs::read(b.join(n))) {
        (Ok(x), Ok(y)) => x == y && !x.is_empty(),
        _ => false,
    })
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("study.toml");
    std::fs::write(
        &cfg,
        "n = 400\nreplications = 4\nseed = 99\ngrid_size = 120\ntruncation = \"uniform\"\nestimator = \"mbc\"\n[model]\npreset = \"model3\"\n",
    )
    .unwrap();
    let (a, b) = (d.join("a"), d.join("b"));
    let ok_sim = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", a.to_str().unwrap()])
        && run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    let same = ok_sim && same_files(&a, &b, &["summary.csv", "replications.csv"]);
    let other_seed = d.join("c");
    let differs = run_cli(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "100", "--out", other_seed.to_str().unwrap()])
        && !same_files(&a, &other_seed, &["replications.csv"]);
    Outcome::new(same && differs, format!("same seed byte-identical: {same}; other seed differs: {differs}"))
}

fn main() {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    type Criterion = (usize, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 10] = [
        (1, "asymptotic variance table", criterion_1),
        (2, "rho against quadrature oracle", criterion_2),
        (3, "discrete moment identities", criterion_3),
        (4, "polynomial reproduction", criterion_4),
        (5, "cv score against brute force", criterion_5),
        (6, "MISE-optimal bandwidth", criterion_6),
        (7, "one-sided breakdown study", criterion_7),
        (8, "bimodal MBC study", criterion_8),
        (9, "forecast against Chain Ladder", criterion_9),
        (10, "CLI determinism", criterion_10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let o = f();
        println!("{} criterion {id} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.summary);
        for d in &o.details {
            println!("    {d}");
        }
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
