//! Monte Carlo protocol: true hazard models, binomial grid data, integrated
//! squared error, empirical MISE and relative error, plus the asymptotic
//! oracles (MISE-optimal bandwidths and the constants `S1`, `S2`).

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::constants::{rho, Estimator};
use crate::data::{GridSample, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, HazardEstimate, SideMode};
use crate::kernel::{BuiltinKernel, Kernel};
use crate::quadrature::AdaptiveQuadrature;
use crate::scalar::{compensated_sum, Scalar};
use crate::selection::{minimize_trace, one_sided_traces, score_trace, BandwidthGrid, SelectionMethod};

/// One Beta density component `weight · Beta(a, b)` on the mapped window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaComponent {
    pub weight: f64,
    pub a: f64,
    pub b: f64,
}

fn default_scale() -> f64 {
    // Cumulative hazard ln 4 over the window: a quarter survive to the end.
    4f64.ln()
}

/// Parametric hazard families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `α(t) = scale · Σ wᵢ Beta(x; aᵢ, bᵢ) / (t_end - t0)` with `x` the
    /// position of `t` in the window.
    BetaMixture {
        components: Vec<BetaComponent>,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    /// `α(t) = level · exp(-rate (t - t0))`.
    ExponentialDecay { level: f64, rate: f64 },
    /// `α(t) = Σ cₖ tᵏ`.
    Polynomial { coefficients: Vec<f64> },
}

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Repr {
    Spec(ModelSpec),
    Custom { alpha: Func, alpha_dd: Func },
}

/// A true hazard on a window.
#[derive(Clone)]
pub struct HazardModel {
    repr: Repr,
    window: (f64, f64),
    label: String,
}

impl fmt::Debug for HazardModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HazardModel").field("label", &self.label).field("window", &self.window).finish()
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Value and first four derivatives of `C x^(a-1) (1-x)^(b-1)` in `x`.
fn beta_derivatives(x: f64, a: f64, b: f64) -> [f64; 5] {
    if x <= 0.0 || x >= 1.0 {
        return [0.0; 5];
    }
    let p = a - 1.0;
    let q = b - 1.0;
    let f = ((p * x.ln() + q * (1.0 - x).ln()) - ln_beta(a, b)).exp();
    let y = 1.0 - x;
    let l1 = p / x - q / y;
    let l2 = -p / (x * x) - q / (y * y);
    let l3 = 2.0 * p / x.powi(3) - 2.0 * q / y.powi(3);
    let l4 = -6.0 * p / x.powi(4) - 6.0 * q / y.powi(4);
    let p1 = l1;
    let p2 = l2 + l1 * l1;
    let p3 = l3 + 3.0 * l1 * l2 + l1.powi(3);
    let p4 = l4 + 4.0 * l1 * l3 + 3.0 * l2 * l2 + 6.0 * l1 * l1 * l2 + l1.powi(4);
    [f, f * p1, f * p2, f * p3, f * p4]
}

impl HazardModel {
    pub fn new(spec: ModelSpec, window: (f64, f64)) -> Result<Self> {
        if !(window.1 > window.0) || !window.0.is_finite() || !window.1.is_finite() {
            return Err(Error::Config(format!("invalid model window [{}, {}]", window.0, window.1)));
        }
        match &spec {
            ModelSpec::BetaMixture { components, scale } => {
                if components.is_empty() {
                    return Err(Error::Config("beta mixture needs at least one component".into()));
                }
                if components.iter().any(|c| !(c.weight > 0.0 && c.a > 0.0 && c.b > 0.0)) || !(*scale > 0.0) {
                    return Err(Error::Config("beta mixture weights, shapes and scale must be positive".into()));
                }
            }
            ModelSpec::ExponentialDecay { level, rate } => {
                if !(*level > 0.0) || !rate.is_finite() {
                    return Err(Error::Config("exponential decay needs a positive level and finite rate".into()));
                }
            }
            ModelSpec::Polynomial { coefficients } => {
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::Config("polynomial coefficients must be finite".into()));
                }
            }
        }
        let label = match &spec {
            ModelSpec::BetaMixture { .. } => "beta_mixture",
            ModelSpec::ExponentialDecay { .. } => "exponential_decay",
            ModelSpec::Polynomial { .. } => "polynomial",
        }
        .to_string();
        Ok(Self { repr: Repr::Spec(spec), window, label })
    }

    /// A model from closures for `α` and `α''`; `h` is then obtained by
    /// finite differences.
    pub fn custom(
        alpha: impl Fn(f64) -> f64 + Send + Sync + 'static,
        alpha_dd: impl Fn(f64) -> f64 + Send + Sync + 'static,
        window: (f64, f64),
    ) -> Result<Self> {
        if !(window.1 > window.0) {
            return Err(Error::Config(format!("invalid model window [{}, {}]", window.0, window.1)));
        }
        Ok(Self { repr: Repr::Custom { alpha: Arc::new(alpha), alpha_dd: Arc::new(alpha_dd) }, window, label: "custom".into() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn spec(&self) -> Option<&ModelSpec> {
        match &self.repr {
            Repr::Spec(s) => Some(s),
            Repr::Custom { .. } => None,
        }
    }

    /// `α` and its first four derivatives, for the parametric families.
    fn derivatives(&self, spec: &ModelSpec, t: f64) -> [f64; 5] {
        let (t0, t1) = self.window;
        match spec {
            ModelSpec::BetaMixture { components, scale } => {
                let width = t1 - t0;
                let x = (t - t0) / width;
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut out = [0.0; 5];
                for c in components {
                    let d = beta_derivatives(x, c.a, c.b);
                    for (k, v) in d.iter().enumerate() {
                        out[k] += scale * c.weight / total * v / width.powi(k as i32 + 1);
                    }
                }
                out
            }
            ModelSpec::ExponentialDecay { level, rate } => {
                let a = level * (-rate * (t - t0)).exp();
                [a, -rate * a, rate * rate * a, -rate.powi(3) * a, rate.powi(4) * a]
            }
            ModelSpec::Polynomial { coefficients } => {
                let mut out = [0.0; 5];
                let mut c = coefficients.clone();
                for slot in out.iter_mut() {
                    *slot = c.iter().rev().fold(0.0, |acc, &k| acc * t + k);
                    c = c.iter().enumerate().skip(1).map(|(i, &k)| k * i as f64).collect();
                }
                out
            }
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Spec(s) => self.derivatives(s, t)[0],
            Repr::Custom { alpha, .. } => alpha(t),
        }
    }

    pub fn alpha_dd(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Spec(s) => self.derivatives(s, t)[2],
            Repr::Custom { alpha_dd, .. } => alpha_dd(t),
        }
    }

    /// `h(t) = α(t) (α''(t)/α(t))''`.
    pub fn h(&self, t: f64) -> f64 {
        match &self.repr {
            Repr::Spec(ModelSpec::ExponentialDecay { .. }) => 0.0,
            Repr::Spec(s) => {
                let [a, a1, a2, a3, a4] = self.derivatives(s, t);
                if a == 0.0 {
                    return 0.0;
                }
                a4 - a2 * a2 / a - 2.0 * a1 * a3 / a + 2.0 * a1 * a1 * a2 / (a * a)
            }
            Repr::Custom { .. } => {
                let e = 1e-3 * (self.window.1 - self.window.0);
                let g = |x: f64| self.alpha_dd(x) / self.alpha(x);
                self.alpha(t) * (g(t + e) - 2.0 * g(t) + g(t - e)) / (e * e)
            }
        }
    }

    /// Largest relative gap between `α''` and a central second difference
    /// of `α` on interior points.
    pub fn second_derivative_mismatch(&self) -> f64 {
        let (t0, t1) = self.window;
        let w = t1 - t0;
        let e = 1e-4 * w;
        let mut worst: f64 = 0.0;
        for i in 1..20 {
            let t = t0 + w * i as f64 / 20.0;
            let fd = (self.alpha(t + e) - 2.0 * self.alpha(t) + self.alpha(t - e)) / (e * e);
            let an = self.alpha_dd(t);
            worst = worst.max((fd - an).abs() / an.abs().max(1.0));
        }
        worst
    }
}

/// Non-canonical default models: unimodal, bimodal, sharp feature and
/// boundary heavy Beta mixtures on `[0, 1]`, and an old-age mortality curve
/// on `[40, 110]` whose survival decays exponentially fast (`model5`).
pub fn preset(name: &str) -> Result<HazardModel> {
    let beta = |v: &[(f64, f64, f64)]| ModelSpec::BetaMixture {
        components: v.iter().map(|&(weight, a, b)| BetaComponent { weight, a, b }).collect(),
        scale: default_scale(),
    };
    let spec = match name {
        "model1" => beta(&[(1.0, 2.0, 3.0)]),
        "model2" => beta(&[(0.5, 4.0, 12.0), (0.5, 12.0, 4.0)]),
        "model3" => beta(&[(0.8, 2.0, 2.0), (0.2, 30.0, 30.0)]),
        "model4" => beta(&[(0.6, 1.5, 6.0), (0.4, 2.0, 2.0)]),
        "model5" => ModelSpec::ExponentialDecay { level: 4.3e-4, rate: -0.08 },
        other => return Err(Error::Config(format!("unknown model preset '{other}'"))),
    };
    let window = if name == "model5" { (40.0, 110.0) } else { (0.0, 1.0) };
    Ok(HazardModel::new(spec, window)?.with_label(name))
}

/// Model section of a study configuration: a preset name or an explicit
/// family with its window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelConfig {
    Preset {
        preset: String,
    },
    Explicit {
        #[serde(flatten)]
        spec: ModelSpec,
        #[serde(default = "unit_window")]
        window: (f64, f64),
    },
}

fn unit_window() -> (f64, f64) {
    (0.0, 1.0)
}

impl ModelConfig {
    pub fn build(&self) -> Result<HazardModel> {
        match self {
            ModelConfig::Preset { preset: p } => preset(p),
            ModelConfig::Explicit { spec, window } => HazardModel::new(spec.clone(), *window),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Truncation {
    #[default]
    None,
    Uniform,
}

fn default_grid_size() -> usize {
    500
}

fn default_replications() -> usize {
    1
}

fn default_kernel() -> BuiltinKernel {
    BuiltinKernel::Epanechnikov
}

fn default_estimator() -> Estimator {
    Estimator::Ll
}

/// A Monte Carlo study, readable from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub model: ModelConfig,
    pub n: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_kernel")]
    pub kernel: BuiltinKernel,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator,
    #[serde(default)]
    pub side_mode: SideMode,
    /// `min:max:count`, in units of the window length. Defaults to
    /// `0.02:0.5:100`.
    #[serde(default)]
    pub bandwidth_grid: Option<String>,
}

impl SimulationConfig {
    pub fn new(model: ModelConfig, n: usize) -> Self {
        Self {
            model,
            n,
            grid_size: default_grid_size(),
            truncation: Truncation::None,
            seed: 0,
            replications: 1,
            kernel: default_kernel(),
            estimator: default_estimator(),
            side_mode: SideMode::default(),
            bandwidth_grid: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size < 2 {
            return Err(Error::Config("grid_size must be at least 2".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        self.model.build()?;
        self.bandwidth_grid::<f64>()?;
        Ok(())
    }

    /// Bandwidth grid in time units.
    pub fn bandwidth_grid<T: Scalar>(&self) -> Result<BandwidthGrid<T>> {
        let model = self.model.build()?;
        let width = model.window().1 - model.window().0;
        let spec = self.bandwidth_grid.as_deref().unwrap_or("0.02:0.5:100");
        let rel: BandwidthGrid<f64> = spec.parse()?;
        BandwidthGrid::new(rel.values().iter().map(|v| T::lit(v * width)).collect())
    }
}

/// Random stream for replication `k`: ChaCha8 seeded with `seed`, stream `k`.
pub fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Binomial grid sample for replication `replication`.
///
/// Cells are walked in time order. With `r` individuals at risk the cell
/// contributes exposure `r δ` and `Binomial(r, α(t_r) δ)` occurrences, which
/// then leave the risk set. With uniform truncation each individual's entry
/// cell is drawn uniformly and exposure starts there.
pub fn generate<T: Scalar>(config: &SimulationConfig, replication: u64) -> Result<GridSample<T>> {
    config.validate()?;
    let model = config.model.build()?;
    let (t0, t1) = model.window();
    let cells = config.grid_size;
    let delta = (t1 - t0) / (cells + 1) as f64;
    let mut rng = replication_rng(config.seed, replication);
    let mut entries = vec![0u64; cells];
    match config.truncation {
        Truncation::None => entries[0] = config.n as u64,
        Truncation::Uniform => {
            let u = Uniform::new(0, cells).map_err(|e| Error::Config(e.to_string()))?;
            for _ in 0..config.n {
                entries[u.sample(&mut rng)] += 1;
            }
        }
    }
    let mut at_risk = 0u64;
    let mut occ = Vec::with_capacity(cells);
    let mut exp = Vec::with_capacity(cells);
    for (r, &e) in entries.iter().enumerate() {
        at_risk += e;
        let t = t0 + (r + 1) as f64 * delta;
        let p = model.alpha(t) * delta;
        if !(0.0..=1.0).contains(&p) || !p.is_finite() {
            return Err(Error::Config(format!("cell {r}: event probability {p} outside [0, 1]")));
        }
        let o = if at_risk == 0 || p == 0.0 {
            0
        } else {
            Binomial::new(at_risk, p).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng)
        };
        exp.push(T::lit(at_risk as f64 * delta));
        occ.push(T::lit(o as f64));
        at_risk -= o;
    }
    GridSample::new(T::lit(t0), T::lit(t1), occ, exp, config.n)
}

/// `n⁻¹ Σ (α̂(t_r) - α(t_r))² Y_r w_r`.
pub fn ise<T: Scalar>(
    estimate: &HazardEstimate<T>,
    sample: &GridSample<T>,
    model: &HazardModel,
    weights: &WeightScheme<T>,
) -> Result<T> {
    if estimate.len() != sample.len() {
        return Err(Error::Validation("estimate and sample lengths differ".into()));
    }
    let w = weights.weights(sample)?;
    let y = sample.exposures();
    let terms = (0..sample.len()).map(|r| {
        let e = estimate.values[r] - T::lit(model.alpha(sample.time(r).to_f64_lossy()));
        e * e * y[r] * w[r]
    });
    Ok(compensated_sum(terms) / T::from_count(sample.n().max(1)))
}

/// Methods compared in a study; `Ise` is the infeasible grid oracle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StudyMethod {
    Ise,
    Cv,
    OscvLeft,
    OscvRight,
    Do,
    Bo,
}

impl StudyMethod {
    pub const ALL: [StudyMethod; 6] = [
        StudyMethod::Ise,
        StudyMethod::Cv,
        StudyMethod::OscvLeft,
        StudyMethod::OscvRight,
        StudyMethod::Do,
        StudyMethod::Bo,
    ];

    fn index(self) -> usize {
        StudyMethod::ALL.iter().position(|m| *m == self).unwrap_or(0)
    }
}

impl From<SelectionMethod> for StudyMethod {
    fn from(m: SelectionMethod) -> Self {
        match m {
            SelectionMethod::Cv => StudyMethod::Cv,
            SelectionMethod::OscvLeft => StudyMethod::OscvLeft,
            SelectionMethod::OscvRight => StudyMethod::OscvRight,
            SelectionMethod::Do => StudyMethod::Do,
            SelectionMethod::Bo => StudyMethod::Bo,
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudyMethod::Ise => "ise",
            StudyMethod::Cv => "cv",
            StudyMethod::OscvLeft => "oscv_left",
            StudyMethod::OscvRight => "oscv_right",
            StudyMethod::Do => "do",
            StudyMethod::Bo => "bo",
        })
    }
}

/// Selected bandwidth, its ISE and the grid-edge flag for one method.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MethodOutcome<T> {
    pub bandwidth: T,
    pub ise: T,
    pub edge: bool,
}

/// Everything recorded for one replication, indexed like [`StudyMethod::ALL`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationOutcome<T> {
    pub replication: u64,
    pub outcomes: [MethodOutcome<T>; 6],
}

impl<T: Scalar> ReplicationOutcome<T> {
    pub fn get(&self, m: StudyMethod) -> &MethodOutcome<T> {
        &self.outcomes[m.index()]
    }
}

/// Run one replication: generate, select with every method, score by ISE.
pub fn run_replication<T: Scalar>(config: &SimulationConfig, replication: u64) -> Result<ReplicationOutcome<T>> {
    let sample: GridSample<T> = generate(config, replication)?;
    let model = config.model.build()?;
    let kernel = Kernel::<T>::builtin(config.kernel);
    let grid: BandwidthGrid<T> = config.bandwidth_grid()?;
    grid.check_against(&sample)?;
    let weights = WeightScheme::UnitProduct;
    let est = config.estimator;
    let kind = EstimatorKind::from(est);
    let mode = config.side_mode;
    let r: T = rho(&kernel, est)?;

    let ise_at = |b: T| -> Result<T> {
        match estimate(&sample, b, &kernel, kind, mode) {
            Ok(e) => ise(&e, &sample, &model, &weights),
            Err(Error::DegeneratePilot) => Ok(T::nan()),
            Err(e) => Err(e),
        }
    };

    let ise_trace: Vec<(T, T)> = grid
        .values()
        .par_iter()
        .map(|&b| ise_at(b).map(|v| (b, v)))
        .collect::<Result<_>>()?;
    let (b_ise, d_ise) = minimize_trace(&ise_trace)?;
    let ise_of = |b: T| -> Result<T> {
        match ise_trace.iter().find(|(g, _)| *g == b) {
            Some((_, v)) => Ok(*v),
            None => ise_at(b),
        }
    };

    let cv_trace = score_trace(&sample, &grid, kind, &kernel, &weights, mode)?;
    let (b_cv, d_cv) = minimize_trace(&cv_trace)?;
    let sides = one_sided_traces(&sample, &grid, est, &kernel, &weights, mode)?;
    let (bl, dl) = minimize_trace(&sides.left)?;
    let (br, dr) = minimize_trace(&sides.right)?;
    let (bb, db) = minimize_trace(&sides.best)?;
    let b_do = r * (bl + br) * T::lit(0.5);

    let outcome = |b: T, edge: bool| -> Result<MethodOutcome<T>> { Ok(MethodOutcome { bandwidth: b, ise: ise_of(b)?, edge }) };
    Ok(ReplicationOutcome {
        replication,
        outcomes: [
            outcome(b_ise, d_ise.minimum_at_grid_edge)?,
            outcome(b_cv, d_cv.minimum_at_grid_edge)?,
            outcome(r * bl, dl.minimum_at_grid_edge)?,
            outcome(r * br, dr.minimum_at_grid_edge)?,
            outcome(b_do, dl.minimum_at_grid_edge || dr.minimum_at_grid_edge)?,
            outcome(r * bb, db.minimum_at_grid_edge)?,
        ],
    })
}

/// Summary of one method across replications.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub model: String,
    pub n: usize,
    pub estimator: Estimator,
    pub method: StudyMethod,
    /// Empirical MISE `m₁`.
    pub m1: f64,
    /// `[m₁(CV) - m₁(ISE)] / [m₁(method) - m₁(ISE)]`; `None` when the
    /// denominator is not positive.
    pub rerr: Option<f64>,
    pub mean_bandwidth: f64,
    pub edge_rate: f64,
}

#[derive(Clone, Debug)]
pub struct StudyReport<T> {
    pub rows: Vec<StudyRow>,
    pub replications: Vec<ReplicationOutcome<T>>,
}

impl<T: Scalar> StudyReport<T> {
    pub fn row(&self, m: StudyMethod) -> &StudyRow {
        &self.rows[m.index()]
    }

    /// CSV `model,n,estimator,method,m1,rerr,mean_bandwidth,edge_rate`.
    pub fn write_summary_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["model", "n", "estimator", "method", "m1", "rerr", "mean_bandwidth", "edge_rate"])?;
        for r in &self.rows {
            w.write_record([
                r.model.clone(),
                r.n.to_string(),
                r.estimator.to_string(),
                r.method.to_string(),
                format!("{:.10e}", r.m1),
                r.rerr.map(|x| format!("{x:.6}")).unwrap_or_else(|| "degenerate".into()),
                format!("{:.8}", r.mean_bandwidth),
                format!("{:.4}", r.edge_rate),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// CSV with one row per replication and method.
    pub fn write_replications_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(["replication", "method", "bandwidth", "ise", "edge"])?;
        for rep in &self.replications {
            for m in StudyMethod::ALL {
                let o = rep.get(m);
                w.write_record([
                    rep.replication.to_string(),
                    m.to_string(),
                    format!("{:.10e}", o.bandwidth.to_f64_lossy()),
                    format!("{:.10e}", o.ise.to_f64_lossy()),
                    (o.edge as u8).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `[m₁(CV) - m₁(ISE)] / [m₁(method) - m₁(ISE)]`, `None` when degenerate.
pub fn relative_error(m1_cv: f64, m1_ise: f64, m1_method: f64) -> Option<f64> {
    let den = m1_method - m1_ise;
    if den > 0.0 {
        Some((m1_cv - m1_ise) / den)
    } else {
        None
    }
}

/// Run all replications (in parallel) and summarize.
pub fn study<T: Scalar>(config: &SimulationConfig) -> Result<StudyReport<T>> {
    config.validate()?;
    let model = config.model.build()?;
    let reps: Vec<ReplicationOutcome<T>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|k| run_replication(config, k))
        .collect::<Result<_>>()?;
    let m1 = |m: StudyMethod| {
        let vals: Vec<f64> = reps.iter().map(|r| r.get(m).ise.to_f64_lossy()).collect();
        compensated_sum(vals.iter().copied()) / vals.len() as f64
    };
    let m1_cv = m1(StudyMethod::Cv);
    let m1_ise = m1(StudyMethod::Ise);
    let rows = StudyMethod::ALL
        .iter()
        .map(|&m| {
            let v = m1(m);
            let bw: Vec<f64> = reps.iter().map(|r| r.get(m).bandwidth.to_f64_lossy()).collect();
            let edges = reps.iter().filter(|r| r.get(m).edge).count();
            StudyRow {
                model: model.label().to_string(),
                n: config.n,
                estimator: config.estimator,
                method: m,
                m1: v,
                rerr: if m == StudyMethod::Ise { None } else { relative_error(m1_cv, m1_ise, v) },
                mean_bandwidth: compensated_sum(bw.iter().copied()) / bw.len() as f64,
                edge_rate: edges as f64 / reps.len() as f64,
            }
        })
        .collect();
    Ok(StudyReport { rows, replications: reps })
}

/// Empirical MISE `m₁` of one method.
pub fn empirical_mise(method: StudyMethod, config: &SimulationConfig) -> Result<f64> {
    Ok(study::<f64>(config)?.row(method).m1)
}

/// `Rerr` of one method against cross-validation; `None` when degenerate.
pub fn rerr(method: StudyMethod, config: &SimulationConfig) -> Result<Option<f64>> {
    Ok(study::<f64>(config)?.row(method).rerr)
}

/// Expected exposure `γ(t) = n⁻¹ E[Y(t)]`.
#[derive(Clone)]
pub struct ExpectedExposure {
    f: Func,
}

impl ExpectedExposure {
    pub fn constant(c: f64) -> Self {
        Self { f: Arc::new(move |_| c) }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f) }
    }

    /// Continuous-time occupancy implied by the study design: survival
    /// without truncation, survival averaged over uniform entry otherwise.
    pub fn for_design(model: &HazardModel, truncation: Truncation) -> Self {
        let (t0, t1) = model.window();
        let steps = 4000;
        let h = (t1 - t0) / steps as f64;
        let mut cum = vec![0.0; steps + 1];
        for i in 0..steps {
            let a = t0 + i as f64 * h;
            cum[i + 1] = cum[i] + h / 6.0 * (model.alpha(a) + 4.0 * model.alpha(a + h / 2.0) + model.alpha(a + h));
        }
        let mut gamma = vec![0.0; steps + 1];
        match truncation {
            Truncation::None => {
                for (g, c) in gamma.iter_mut().zip(&cum) {
                    *g = (-c).exp();
                }
            }
            Truncation::Uniform => {
                // γ(t) = (t1 - t0)⁻¹ ∫_{t0}^{t} exp(-(A(t) - A(s))) ds.
                let mut acc = 0.0;
                for i in 1..=steps {
                    acc = acc * (-(cum[i] - cum[i - 1])).exp()
                        + h * 0.5 * (1.0 + (-(cum[i] - cum[i - 1])).exp());
                    gamma[i] = acc / (t1 - t0);
                }
            }
        }
        let f = move |t: f64| {
            let x = ((t - t0) / h).clamp(0.0, steps as f64);
            let i = (x.floor() as usize).min(steps - 1);
            let frac = x - i as f64;
            gamma[i] * (1.0 - frac) + gamma[i + 1] * frac
        };
        Self { f: Arc::new(f) }
    }

    pub fn eval(&self, t: f64) -> f64 {
        (self.f)(t)
    }
}

fn window_integral(model: &HazardModel, f: impl Fn(f64) -> f64) -> Result<f64> {
    let (t0, t1) = model.window();
    let quad = AdaptiveQuadrature::new(20, 1e-10);
    let pts: Vec<f64> = (0..=16).map(|i| t0 + (t1 - t0) * i as f64 / 16.0).collect();
    quad.integrate(f, &pts)
}

/// Kernel quantities entering the oracles: `R` and `μ2` of the equivalent
/// kernel, and `R` of its twicing kernel.
fn oracle_kernel_constants<T: Scalar>(kernel: &Kernel<T>) -> Result<(f64, f64, f64)> {
    let eq = kernel.equivalent_local_linear()?;
    let m = eq.moments();
    let rg = eq.twicing()?.moments().roughness;
    Ok((m.roughness.to_f64_lossy(), m.mu2.to_f64_lossy(), rg.to_f64_lossy()))
}

/// MISE-optimal bandwidth `C₀ n^{-1/5}` (local linear) or `C₀ n^{-1/9}`
/// (bias corrected).
pub fn mise_optimal_bandwidth<T: Scalar>(
    model: &HazardModel,
    kernel: &Kernel<T>,
    estimator: Estimator,
    gamma: &ExpectedExposure,
    n: usize,
    weight: impl Fn(f64) -> f64,
) -> Result<f64> {
    let (r, mu2, rg) = oracle_kernel_constants(kernel)?;
    let a = window_integral(model, |t| model.alpha(t) * weight(t))?;
    match estimator {
        Estimator::Ll => {
            let b = window_integral(model, |t| model.alpha_dd(t).powi(2) * gamma.eval(t) * weight(t))?;
            if !(b > 0.0) {
                return Err(Error::UnboundedBandwidth("second derivative of the hazard vanishes".into()));
            }
            let c0 = (r * a / (mu2 * mu2 * b)).powf(0.2);
            Ok(c0 * (n as f64).powf(-0.2))
        }
        Estimator::Mbc => {
            let b = window_integral(model, |t| model.h(t).powi(2) * gamma.eval(t) * weight(t))?;
            if !(b > 0.0) {
                return Err(Error::UnboundedBandwidth("h = α (α''/α)'' vanishes".into()));
            }
            let c0 = (rg * a / (mu2.powi(4) / 2.0 * b)).powf(1.0 / 9.0);
            Ok(c0 * (n as f64).powf(-1.0 / 9.0))
        }
    }
}

/// The constants `(S1, S2)` of the asymptotic variance `S2 + S1 Ψ`.
pub fn theorem_constants<T: Scalar>(
    model: &HazardModel,
    kernel: &Kernel<T>,
    estimator: Estimator,
    gamma: &ExpectedExposure,
    weight: impl Fn(f64) -> f64,
) -> Result<(f64, f64)> {
    let m = kernel.moments();
    let (rk, mu2) = (m.roughness.to_f64_lossy(), m.mu2.to_f64_lossy());
    let a = window_integral(model, |t| model.alpha(t) * weight(t))?;
    let a2 = window_integral(model, |t| (model.alpha(t) * weight(t)).powi(2))?;
    match estimator {
        Estimator::Ll => {
            let dd = |t: f64| model.alpha_dd(t).powi(2) * gamma.eval(t);
            let b = window_integral(model, |t| dd(t) * weight(t))?;
            let c = window_integral(model, |t| dd(t) * weight(t).powi(2) * model.alpha(t))?;
            if !(b > 0.0) {
                return Err(Error::UnboundedBandwidth("second derivative of the hazard vanishes".into()));
            }
            let s1 = rk.powf(-1.4) * a2 / (25.0 * mu2.powf(1.2) * b.powf(0.6) * a.powf(-1.4));
            let s2 = 4.0 * rk.powf(-0.4) * c / (25.0 * mu2.powf(1.2) * a.powf(0.4) * b.powf(1.6));
            Ok((s1, s2))
        }
        Estimator::Mbc => {
            let rg = kernel.twicing()?.moments().roughness.to_f64_lossy();
            let hh = |t: f64| model.h(t).powi(2) * gamma.eval(t);
            let b = window_integral(model, |t| hh(t) * weight(t))?;
            let c = window_integral(model, |t| hh(t) * weight(t).powi(2) * model.alpha(t))?;
            if !(b > 0.0) {
                return Err(Error::UnboundedBandwidth("h = α (α''/α)'' vanishes".into()));
            }
            let s1 = 2f64.powf(1.0 / 3.0) / 81.0 * rg.powf(-15.0 / 18.0) * a2
                / (mu2.powf(12.0 / 9.0) * b.powf(3.0 / 9.0) * a.powf(-15.0 / 9.0));
            let s2 = 2f64.powf(30.0 / 9.0) / 81.0 * rg.powf(-6.0 / 9.0) * c
                / (mu2.powf(12.0 / 9.0) * a.powf(6.0 / 9.0) * b.powf(12.0 / 9.0));
            Ok((s1, s2))
        }
    }
}
