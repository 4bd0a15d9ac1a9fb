//! `qwalk`: spectra, grid sweeps and threshold statistics as CSV files.
//!
//! Every CSV gets a sidecar `<out>.manifest.json`. Exit codes: 0 ok,
//! 2 bad configuration or I/O, 3 numerical failure.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qwalk_core::ensemble::{
    aggregate, sweep, threshold_batch, write_threshold_table, Axis, AxisGrid, ModelKind, Observable, SweepSpec,
    ThresholdConfig, MAX_LINDBLAD_SWEEP_N,
};
use qwalk_core::lindblad::build_lindbladian;
use qwalk_core::model::{sample_realization, DistShape, ModelParams};
use qwalk_core::spectral::{analyze_rate_matrix, analyze_superoperator};
use qwalk_core::stochastic::build_w;
use qwalk_core::Error;
use serde::Serialize;

/// Column layouts, bumped whenever a header changes.
const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(name = "qwalk", version, about = "Relaxation spectra of a disordered quantum random walk on a ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues with Q, IPR and branch labels for one realization.
    Spectrum(SpectrumArgs),
    /// Two-axis grid of an ensemble observable.
    Sweep(SweepArgs),
    /// Per-realization thresholds and their cumulative histogram.
    Threshold(ThresholdArgs),
}

#[derive(Args, Clone)]
struct ParamArgs {
    /// JSON file with all model parameters; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "N")]
    n: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    f_bias: Option<f64>,
    #[arg(long)]
    sigma_f: Option<f64>,
    #[arg(long)]
    sigma_nu: Option<f64>,
    #[arg(long = "T-bath")]
    t_bath: Option<f64>,
    #[arg(long)]
    dist_shape: Option<ShapeArg>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(ValueEnum, Clone, Copy)]
enum ShapeArg {
    Box,
    Gaussian,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum SpectrumModel {
    Stochastic,
    Lindblad,
}

#[derive(ValueEnum, Clone, Copy)]
enum EnsembleModel {
    Stochastic,
    Lindblad,
    Surrogate,
}

impl From<EnsembleModel> for ModelKind {
    fn from(m: EnsembleModel) -> Self {
        match m {
            EnsembleModel::Stochastic => ModelKind::Stochastic,
            EnsembleModel::Lindblad => ModelKind::Lindblad,
            EnsembleModel::Surrogate => ModelKind::Surrogate,
        }
    }
}

#[derive(ValueEnum, Clone, Copy)]
enum SweepObservable {
    Ncmplx,
    Fc,
    SigmaCritical,
}

#[derive(ValueEnum, Clone, Copy)]
enum ThresholdObservable {
    Fc,
    SigmaCritical,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "stochastic")]
    model: SpectrumModel,
    /// Comma-separated hopping values; writes one file per value, named `<stem>_c<value>.csv`.
    #[arg(long, value_delimiter = ',')]
    c_sweep: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "stochastic")]
    model: EnsembleModel,
    /// Two axis names, e.g. `c,f`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    axes: Vec<String>,
    /// Grid per axis, given twice in axis order: `start:end:count` or a comma list.
    #[arg(long, num_args = 1)]
    grid: Vec<String>,
    #[arg(long, default_value_t = 1)]
    realizations: usize,
    #[arg(long, value_enum, default_value = "ncmplx")]
    observable: SweepObservable,
    /// Row file; cell means go to `<stem>.means.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_enum, default_value = "stochastic")]
    model: EnsembleModel,
    #[arg(long, value_enum)]
    observable: ThresholdObservable,
    #[arg(long)]
    realizations: usize,
    /// Threshold table; the histogram goes to `<stem>.hist.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    params: &'a ModelParams,
    master_seed: u64,
    tool_version: &'static str,
    csv_schema_version: u32,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
    wall_time_s: f64,
}

type CliResult<T> = std::result::Result<T, Error>;

fn load_params(a: &ParamArgs) -> CliResult<ModelParams> {
    let mut p = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<ModelParams>(&text)?
        }
        None => ModelParams::default(),
    };
    if let Some(v) = a.n {
        p.n = v;
    }
    if let Some(v) = a.nu {
        p.nu = v;
    }
    if let Some(v) = a.c {
        p.c = v;
    }
    if let Some(v) = a.gamma {
        p.gamma = v;
    }
    if let Some(v) = a.f_bias {
        p.f_bias = v;
    }
    if let Some(v) = a.sigma_f {
        p.sigma_f = v;
    }
    if let Some(v) = a.sigma_nu {
        p.sigma_nu = v;
    }
    if let Some(v) = a.t_bath {
        p.t_bath = v;
    }
    if let Some(v) = a.dist_shape {
        p.dist_shape = match v {
            ShapeArg::Box => DistShape::Box,
            ShapeArg::Gaussian => DistShape::Gaussian,
        };
    }
    if let Some(v) = a.seed {
        p.seed = v;
    }
    p.validate()?;
    for w in p.hierarchy_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(p)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}{suffix}"))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_manifest(
    out: &Path,
    command: &str,
    params: &ModelParams,
    outputs: &[&Path],
    extra: Option<serde_json::Value>,
    start: Instant,
) -> CliResult<()> {
    let m = RunManifest {
        command,
        params,
        master_seed: params.seed,
        tool_version: env!("CARGO_PKG_VERSION"),
        csv_schema_version: CSV_SCHEMA_VERSION,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        extra,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    serde_json::to_writer_pretty(create(&manifest_path(out))?, &m)?;
    Ok(())
}

fn spectrum_file(params: &ModelParams, model: SpectrumModel, out: &Path) -> CliResult<()> {
    let start = Instant::now();
    let real = sample_realization(params)?;
    let report = match model {
        SpectrumModel::Stochastic => analyze_rate_matrix(&build_w(&real))?,
        SpectrumModel::Lindblad => analyze_superoperator(&build_lindbladian(&real, params)?)?,
    };
    report.write_csv(create(out)?)?;
    let name = match model {
        SpectrumModel::Stochastic => "spectrum --model stochastic",
        SpectrumModel::Lindblad => "spectrum --model lindblad",
    };
    write_manifest(out, name, params, &[out], None, start)
}

fn cmd_spectrum(a: &SpectrumArgs) -> CliResult<()> {
    let params = load_params(&a.params)?;
    match &a.c_sweep {
        None => spectrum_file(&params, a.model, &a.out),
        Some(cs) => {
            for &c in cs {
                let p = ModelParams { c, ..params.clone() };
                p.validate()?;
                spectrum_file(&p, a.model, &sibling(&a.out, &format!("_c{c}.csv")))?;
            }
            Ok(())
        }
    }
}

fn parse_grid(axis: Axis, s: &str) -> CliResult<AxisGrid> {
    let bad = || Error::InvalidParameter { name: "grid", reason: format!("cannot parse `{s}`") };
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let end: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return AxisGrid::linspace(axis, start, end, count);
    }
    let values = s.split(',').map(|v| v.trim().parse::<f64>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad())?;
    AxisGrid::new(axis, values)
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let start = Instant::now();
    let fixed = load_params(&a.params)?;
    if a.axes.len() != 2 || a.grid.len() != 2 {
        return Err(Error::InvalidParameter { name: "axes", reason: "need exactly two --axes and two --grid values".into() });
    }
    let axis1: Axis = a.axes[0].parse()?;
    let axis2: Axis = a.axes[1].parse()?;
    let spec = SweepSpec {
        model: a.model.into(),
        axis1: parse_grid(axis1, &a.grid[0])?,
        axis2: parse_grid(axis2, &a.grid[1])?,
        fixed: fixed.clone(),
        realizations: a.realizations,
        observable: match a.observable {
            SweepObservable::Ncmplx => Observable::NcmplxFraction,
            SweepObservable::Fc => Observable::FcThreshold,
            SweepObservable::SigmaCritical => Observable::SigmaCritical,
        },
        threshold: ThresholdConfig::default(),
    };
    let result = sweep(&spec)?;
    let means = sibling(&a.out, ".means.csv");
    result.write_rows(create(&a.out)?)?;
    result.write_means(create(&means)?)?;
    let extra = serde_json::json!({ "sweep": &spec, "sentinels": result.sentinel_count() });
    write_manifest(&a.out, "sweep", &fixed, &[&a.out, &means], Some(extra), start)
}

fn cmd_threshold(a: &ThresholdArgs) -> CliResult<()> {
    let start = Instant::now();
    let params = load_params(&a.params)?;
    let model: ModelKind = a.model.into();
    if model == ModelKind::Lindblad && params.n > MAX_LINDBLAD_SWEEP_N {
        return Err(Error::TooLarge { n: params.n, max: MAX_LINDBLAD_SWEEP_N });
    }
    let observable = match a.observable {
        ThresholdObservable::Fc => Observable::FcThreshold,
        ThresholdObservable::SigmaCritical => Observable::SigmaCritical,
    };
    let cfg = ThresholdConfig::default();
    let records = threshold_batch(&params, model, observable, a.realizations, &cfg)?;
    write_threshold_table(&records, create(&a.out)?)?;
    let stats = aggregate(&records.iter().map(|r| r.outcome.threshold).collect::<Vec<_>>())?;
    let hist = sibling(&a.out, ".hist.csv");
    stats.write_histogram(create(&hist)?)?;
    let extra = serde_json::json!({
        "model": model,
        "observable": observable,
        "realizations": a.realizations,
        "threshold_config": cfg,
        "mean": stats.mean,
        "median": stats.median,
        "sentinels": stats.sentinels,
        "non_monotone": records.iter().filter(|r| !r.outcome.monotone).count(),
    });
    write_manifest(&a.out, "threshold", &params, &[&a.out, &hist], Some(extra), start)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Threshold(a) => cmd_threshold(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
