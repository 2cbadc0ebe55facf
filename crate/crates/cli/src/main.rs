use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use kernel_hazard::constants::{psi_table, write_psi_table};
use kernel_hazard::data::{load_sample_csv, load_weights_csv};
use kernel_hazard::estimators::estimate;
use kernel_hazard::forecasting::{chain_ladder, fit_components, forecast, reverse_components, select_components};
use kernel_hazard::selection::select;
use kernel_hazard::simulation::{study, SimulationConfig};
use kernel_hazard::{
    BandwidthGrid, BuiltinKernel, Error, Estimator, EstimatorKind, Kernel, Result, RunOffTriangle, SelectionMethod, SideMode,
    WeightScheme,
};

/// Kernel hazard estimation, bandwidth selection, simulation studies and
/// claims forecasting.
#[derive(Parser, Debug)]
#[command(name = "kernel-hazard", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// TOML file with defaults for the flags below; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate a hazard at a fixed bandwidth; writes hazard.csv.
    Fit(FitArgs),
    /// Select a bandwidth; writes selection.csv and trace.csv.
    Select(SelectArgs),
    /// Run a Monte Carlo study from --config; writes summary.csv and replications.csv.
    Simulate(SimulateArgs),
    /// Forecast a run-off triangle; writes forecast_periods.csv, forecast_cells.csv,
    /// chain_ladder_periods.csv and components.csv.
    Forecast(ForecastArgs),
    /// Asymptotic variance factors and ρ; writes psi_table.csv.
    Constants(ConstantsArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Estimator: ll or mbc [default: ll].
    #[arg(long)]
    estimator: Option<Estimator>,
    /// Kernel: epanechnikov, quartic or sextic [default: epanechnikov].
    #[arg(long)]
    kernel: Option<BuiltinKernel>,
    /// Side selection process for best one-sided fits: occurrence or exposure [default: occurrence].
    #[arg(long)]
    side_mode: Option<SideMode>,
    /// Output directory [default: .].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Grid CSV (time,occurrences,exposure) or records CSV (entry,exit,event).
    #[arg(long)]
    input: PathBuf,
    /// Bandwidth.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Use the best one-sided variant of the estimator.
    #[arg(long)]
    best_one_sided: bool,
    /// Cells when aggregating records [default: 100].
    #[arg(long)]
    cells: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SelectArgs {
    /// Grid CSV (time,occurrences,exposure) or records CSV (entry,exit,event).
    #[arg(long)]
    input: PathBuf,
    /// Selector: cv, do, bo, oscv_left or oscv_right [default: bo].
    #[arg(long)]
    method: Option<SelectionMethod>,
    /// Bandwidth grid min:max:count [default: 50 values from 2δ to half the window].
    #[arg(long)]
    bandwidth_grid: Option<String>,
    /// unit or custom:<path> with a `weight` column [default: unit].
    #[arg(long)]
    weights: Option<String>,
    /// Cells when aggregating records [default: 100].
    #[arg(long)]
    cells: Option<usize>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured number of replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Overrides the configured bandwidth grid (min:max:count relative to the window).
    #[arg(long)]
    bandwidth_grid: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ForecastArgs {
    /// Triangle CSV x,z,count (1-indexed).
    #[arg(long)]
    input: PathBuf,
    /// Triangle dimension [default: largest x + z - 1 in the input].
    #[arg(long)]
    m: Option<usize>,
    /// Selector: cv, do, bo, oscv_left or oscv_right [default: bo].
    #[arg(long)]
    method: Option<SelectionMethod>,
    /// Fixed bandwidth for both components, skipping selection.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Bandwidth grid min:max:count [default: 50 values from 2 to half the dimension].
    #[arg(long)]
    bandwidth_grid: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ConstantsArgs {
    /// Kernels to tabulate [default: all three].
    #[arg(long)]
    kernel: Vec<BuiltinKernel>,
    /// Output directory [default: .].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Defaults read from `--config` for the non-simulate subcommands.
#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct FileDefaults {
    estimator: Option<Estimator>,
    kernel: Option<BuiltinKernel>,
    side_mode: Option<SideMode>,
    method: Option<SelectionMethod>,
    bandwidth: Option<f64>,
    bandwidth_grid: Option<String>,
    weights: Option<String>,
    cells: Option<usize>,
    out: Option<PathBuf>,
}

struct Resolved {
    estimator: Estimator,
    kernel: Kernel,
    side_mode: SideMode,
    out: PathBuf,
}

fn resolve(common: &Common, file: &FileDefaults) -> Result<Resolved> {
    let out = common.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    Ok(Resolved {
        estimator: common.estimator.or(file.estimator).unwrap_or(Estimator::Ll),
        kernel: Kernel::builtin(common.kernel.or(file.kernel).unwrap_or(BuiltinKernel::Epanechnikov)),
        side_mode: common.side_mode.or(file.side_mode).unwrap_or_default(),
        out,
    })
}

/// Name the file in I/O errors.
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        e => e,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| at(path, e.into()))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).map_err(|e| at(&path, e.into()))?))
}

fn parse_weights(spec: Option<&str>) -> Result<WeightScheme> {
    match spec.unwrap_or("unit") {
        "unit" => Ok(WeightScheme::UnitProduct),
        s => match s.strip_prefix("custom:") {
            Some(path) => load_weights_csv(path).map_err(|e| at(Path::new(path), e)),
            None => Err(Error::Config(format!("unknown weights '{s}'; expected unit or custom:<path>"))),
        },
    }
}

fn read_defaults(path: Option<&Path>) -> Result<FileDefaults> {
    match path {
        Some(p) => toml::from_str(&read_text(p)?).map_err(|e| Error::Config(e.to_string())),
        None => Ok(FileDefaults::default()),
    }
}

fn run_fit(args: &FitArgs, file: &FileDefaults) -> Result<()> {
    let r = resolve(&args.common, file)?;
    let sample = load_sample_csv(&args.input, args.cells.or(file.cells).unwrap_or(100)).map_err(|e| at(&args.input, e))?;
    let b = args
        .bandwidth
        .or(file.bandwidth)
        .ok_or_else(|| Error::Config("fit needs --bandwidth".into()))?;
    let kind = if args.best_one_sided { EstimatorKind::best_one_sided(r.estimator) } else { r.estimator.into() };
    let est = estimate(&sample, b, &r.kernel, kind, r.side_mode)?;
    let mut w = create(&r.out, "hazard.csv")?;
    est.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_select(args: &SelectArgs, file: &FileDefaults) -> Result<()> {
    let r = resolve(&args.common, file)?;
    let sample = load_sample_csv(&args.input, args.cells.or(file.cells).unwrap_or(100)).map_err(|e| at(&args.input, e))?;
    let grid = match args.bandwidth_grid.as_ref().or(file.bandwidth_grid.as_ref()) {
        Some(s) => s.parse()?,
        None => BandwidthGrid::default_for(&sample)?,
    };
    let weights = parse_weights(args.weights.as_deref().or(file.weights.as_deref()))?;
    let method = args.method.or(file.method).unwrap_or(SelectionMethod::Bo);
    let res = select(&sample, &grid, method, r.estimator, &r.kernel, &weights, r.side_mode)?;
    let mut w = create(&r.out, "selection.csv")?;
    res.write_summary_csv(&mut w)?;
    w.flush()?;
    let mut t = create(&r.out, "trace.csv")?;
    res.write_trace_csv(&mut t)?;
    t.flush()?;
    println!("{}", res.bandwidth);
    Ok(())
}

fn run_simulate(args: &SimulateArgs, config: Option<&Path>) -> Result<()> {
    let path = config.ok_or_else(|| Error::Config("simulate needs --config <study.toml>".into()))?;
    let mut cfg = SimulationConfig::from_toml(&read_text(path)?)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.replications {
        cfg.replications = n;
    }
    if let Some(g) = &args.bandwidth_grid {
        cfg.bandwidth_grid = Some(g.clone());
    }
    if let Some(e) = args.common.estimator {
        cfg.estimator = e;
    }
    if let Some(k) = args.common.kernel {
        cfg.kernel = k;
    }
    if let Some(m) = args.common.side_mode {
        cfg.side_mode = m;
    }
    cfg.validate()?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let report = study::<f64>(&cfg)?;
    let mut w = create(&out, "summary.csv")?;
    report.write_summary_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&out, "replications.csv")?;
    report.write_replications_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run_forecast(args: &ForecastArgs, file: &FileDefaults) -> Result<()> {
    let r = resolve(&args.common, file)?;
    let triangle = RunOffTriangle::load_csv(&args.input, args.m).map_err(|e| at(&args.input, e))?;
    let kind = EstimatorKind::from(r.estimator);
    let (estimates, bandwidths) = match args.bandwidth.or(file.bandwidth) {
        Some(b) => (fit_components(&triangle, (b, b), &r.kernel, kind, r.side_mode)?, (b, b)),
        None => {
            let grid = match args.bandwidth_grid.as_ref().or(file.bandwidth_grid.as_ref()) {
                Some(s) => s.parse()?,
                None => BandwidthGrid::default_for(&reverse_components(&triangle)?.0)?,
            };
            let method = args.method.or(file.method).unwrap_or(SelectionMethod::Bo);
            let sel = select_components(&triangle, &grid, method, r.estimator, &r.kernel, r.side_mode)?;
            let b = (sel.underwriting.bandwidth, sel.delay.bandwidth);
            (sel.estimates, b)
        }
    };
    let fc = forecast(&triangle, &estimates)?;
    let cl = chain_ladder(&triangle)?;
    let mut w = create(&r.out, "forecast_periods.csv")?;
    fc.write_periods_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&r.out, "forecast_cells.csv")?;
    fc.write_cells_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&r.out, "chain_ladder_periods.csv")?;
    cl.write_periods_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&r.out, "components.csv")?;
    writeln!(w, "component,bandwidth")?;
    writeln!(w, "underwriting,{}", bandwidths.0)?;
    writeln!(w, "delay,{}", bandwidths.1)?;
    w.flush()?;
    Ok(())
}

fn run_constants(args: &ConstantsArgs, file: &FileDefaults) -> Result<()> {
    let out = args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out)?;
    let kernels: Vec<BuiltinKernel> = if args.kernel.is_empty() {
        file.kernel.map(|k| vec![k]).unwrap_or_else(|| BuiltinKernel::ALL.to_vec())
    } else {
        args.kernel.clone()
    };
    let rows = psi_table(&kernels)?;
    let mut w = create(&out, "psi_table.csv")?;
    write_psi_table(&rows, &mut w)?;
    w.flush()?;
    write_psi_table(&rows, std::io::stdout().lock())?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let config = cli.config.as_deref();
    match &cli.command {
        Command::Simulate(a) => run_simulate(a, config),
        other => {
            let file = read_defaults(config)?;
            match other {
                Command::Fit(a) => run_fit(a, &file),
                Command::Select(a) => run_select(a, &file),
                Command::Forecast(a) => run_forecast(a, &file),
                Command::Constants(a) => run_constants(a, &file),
                Command::Simulate(_) => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kernel-hazard: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}
