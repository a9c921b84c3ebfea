//! Command-line entry point: synthesis, mixture fitting, training,
//! inference, evaluation, benchmarking, raster export, and file conversion
//! behind one binary.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Option precedence: command-line flag, then config-file value, then the
//! `STRATA_SEED` environment variable (seed only), then the built-in
//! default.  Config files are flat `key = value` text; unknown keys are
//! rejected.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::baselines::{direct_regression_train, DirectTrainConfig, RegressionReport, TreeRules};
use crate::eval::{
    benchmark_throughput, evaluate, format_report_table, format_throughput, report_csv, EvalError,
    Method,
};
use crate::gamma::{ecm_fit, format_mixture, save_mixture, GammaError, GammaMixture};
use crate::loss::LossConfig;
use crate::plotio::{
    normalize_elevation, parse_plot_with_radius, read_plot_file, write_plot_file, Plot,
    PlotIoError, DEFAULT_NEIGHBORHOOD_RADIUS, DEFAULT_PLOT_RADIUS, DEFAULT_SUBSAMPLE,
};
use crate::pointnet::NetError;
use crate::raster::{to_composite_ppm, to_pgm, to_pixels_csv, Stratum};
use crate::rng::{derive_seed, STREAM_SYNTH};
use crate::synthgen::{generate_plot, write_truth_sidecar, SceneSpec, SynthError};
use crate::train::{
    infer, load_model, save_direct_model, save_occupancy_model, save_report, train, SavedModel,
    TrainConfig, TrainError,
};

/// Fallback seed when neither flag, config file, nor `STRATA_SEED` is set.
pub const DEFAULT_SEED: u64 = 7;

/// Parses `argv` and runs the selected subcommand, returning the process
/// exit code.
pub fn dispatch<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

#[derive(Parser)]
#[command(
    name = "strata",
    version,
    about = "Vegetation stratum occupancy from airborne LiDAR plots"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic labeled plots with ground-truth sidecars
    Synth(SynthArgs),
    /// Fit the two-component elevation mixture over a dataset
    FitGamma(FitGammaArgs),
    /// Train a model and write a bundle directory
    Train(TrainArgs),
    /// Run a trained model on one plot
    Infer(InferArgs),
    /// Score a prediction method on a labeled dataset
    Eval(EvalArgs),
    /// Measure end-to-end inference throughput
    Bench(BenchArgs),
    /// Export occupancy rasters for one plot
    ExportRaster(ExportRasterArgs),
    /// Canonicalize a loosely formatted plot file
    Convert(ConvertArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` config file supplying defaults for any flag
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed [default: 7, or STRATA_SEED]
    #[arg(long)]
    seed: Option<u64>,
    /// Plot radius in metres [default: 10]
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of plots to generate
    #[arg(long)]
    plots: usize,
    /// Output directory for plot and truth files
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct FitGammaArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of plot files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output mixture file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Convergence threshold on the log-likelihood delta [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap [default: 200]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Ground-normalization neighborhood radius in metres [default: 0.5]
    #[arg(long)]
    neighborhood_radius: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of labeled plot files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Output bundle directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Model to train: "ours" or "direct" [default: ours]
    #[arg(long)]
    method: Option<String>,
    /// Raster side length in pixels [default: 32]
    #[arg(long)]
    raster_size: Option<usize>,
    /// Plots per optimizer step [default: 20]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Passes over the training split [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// ADAM step size [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Points drawn per plot per epoch [default: 4096]
    #[arg(long)]
    subsample: Option<usize>,
    /// Training fraction of the dataset [default: 0.8]
    #[arg(long)]
    split: Option<f64>,
    /// Weight of the raster entropy term [default: 0.2]
    #[arg(long)]
    entropy_weight: Option<f64>,
    /// Weight of the elevation likelihood term [default: 1]
    #[arg(long)]
    likelihood_weight: Option<f64>,
    /// Ground-normalization neighborhood radius in metres [default: 0.5]
    #[arg(long)]
    neighborhood_radius: Option<f64>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model bundle directory
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Plot file to run on
    #[arg(long, value_name = "FILE")]
    plot: PathBuf,
    /// Also write the predicted ratios to this file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Write the composite raster image (occupancy models only)
    #[arg(long, value_name = "FILE")]
    export_ppm: Option<PathBuf>,
    /// Write per-stratum grayscale rasters with this path prefix
    #[arg(long, value_name = "PREFIX")]
    export_pgm: Option<PathBuf>,
    /// Write per-pixel occupancy values as CSV
    #[arg(long, value_name = "FILE")]
    export_pixels: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of labeled plot files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model bundle directory (required for "ours" and "direct")
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    /// Method: "ours", "handcrafted", or "direct" [default: model kind, else handcrafted]
    #[arg(long)]
    method: Option<String>,
    /// Also write the report as CSV
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[command(flatten)]
    rules: RuleArgs,
    /// Raster side length for the handcrafted method [default: 32]
    #[arg(long)]
    raster_size: Option<usize>,
    /// Ground-normalization neighborhood radius in metres [default: 0.5]
    #[arg(long)]
    neighborhood_radius: Option<f64>,
}

#[derive(Args)]
struct RuleArgs {
    /// Handcrafted cascade: top of the low band in metres [default: 0.5]
    #[arg(long)]
    lower_max: Option<f64>,
    /// Handcrafted cascade: top of the middle band in metres [default: 1.5]
    #[arg(long)]
    medium_max: Option<f64>,
    /// Handcrafted cascade: minimum vegetation NDVI [default: 0.3]
    #[arg(long)]
    ndvi_threshold: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Directory of plot files
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Model bundle directory (required for "ours" and "direct")
    #[arg(long, value_name = "DIR")]
    model: Option<PathBuf>,
    /// Method: "ours", "handcrafted", or "direct" [default: model kind, else handcrafted]
    #[arg(long)]
    method: Option<String>,
    /// Timed repetitions; the median rate is reported [default: 5]
    #[arg(long)]
    reps: Option<usize>,
    /// Points subsampled per plot [default: 4096]
    #[arg(long)]
    subsample: Option<usize>,
    /// Worker threads [default: 1]
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    rules: RuleArgs,
    /// Raster side length for the handcrafted method [default: 32]
    #[arg(long)]
    raster_size: Option<usize>,
    /// Ground-normalization neighborhood radius in metres [default: 0.5]
    #[arg(long)]
    neighborhood_radius: Option<f64>,
}

#[derive(Args)]
struct ExportRasterArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model bundle directory (occupancy models only)
    #[arg(long, value_name = "DIR")]
    model: PathBuf,
    /// Plot file to run on
    #[arg(long, value_name = "FILE")]
    plot: PathBuf,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Write only the per-stratum grayscale rasters
    #[arg(long)]
    pgm: bool,
    /// Write only the composite color raster
    #[arg(long)]
    ppm: bool,
    /// Write only the per-pixel CSV
    #[arg(long)]
    pixels: bool,
}

#[derive(Args)]
struct ConvertArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input file: canonical, or bare 9-column point lines
    #[arg(long, value_name = "FILE")]
    input: PathBuf,
    /// Output canonical plot file
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Plot identifier when the input has no header [default: input stem]
    #[arg(long)]
    id: Option<String>,
    /// Occupancy labels when the input has no header
    #[arg(long, num_args = 3, value_names = ["O_L", "O_M", "O_H"])]
    labels: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<PlotIoError> for CliError {
    fn from(e: PlotIoError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<GammaError> for CliError {
    fn from(e: GammaError) -> Self {
        match e {
            GammaError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFinite(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::BadConfig(_) => CliError::Usage(e.to_string()),
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::Net(inner) => inner.into(),
            TrainError::Gamma(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::BadBenchConfig => CliError::Usage(e.to_string()),
            EvalError::Train(inner) => inner.into(),
            EvalError::Net(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Keys accepted in `key = value` config files.
const CONFIG_KEYS: [&str; 16] = [
    "raster_size",
    "batch_size",
    "epochs",
    "learning_rate",
    "seed",
    "subsample",
    "split",
    "entropy_weight",
    "likelihood_weight",
    "lower_max",
    "medium_max",
    "ndvi_threshold",
    "neighborhood_radius",
    "radius",
    "ecm_tol",
    "ecm_max_iter",
];

struct FileConfig(HashMap<String, String>);

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig(HashMap::new()));
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut map = HashMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected `key = value`, got {line:?}",
                    no + 1
                )));
            };
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if !CONFIG_KEYS.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "config line {}: unknown key {key:?}",
                    no + 1
                )));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(CliError::Usage(format!(
                    "config line {}: duplicate key {key:?}",
                    no + 1
                )));
            }
        }
        Ok(FileConfig(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config key {key}: cannot parse {raw:?}"))),
        }
    }
}

/// Flag beats config file beats `default`.
fn pick<T: FromStr>(
    flag: Option<T>,
    fc: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(fc.get(key)?.unwrap_or(default)),
    }
}

/// Seed resolution also consults the `STRATA_SEED` environment variable.
fn resolve_seed(flag: Option<u64>, fc: &FileConfig) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = fc.get("seed")? {
        return Ok(s);
    }
    match std::env::var("STRATA_SEED") {
        Ok(raw) => raw.trim().parse().map_err(|_| {
            CliError::Usage(format!("STRATA_SEED must be an unsigned integer, got {raw:?}"))
        }),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn resolve_radius(common: &CommonArgs, fc: &FileConfig) -> Result<f64, CliError> {
    pick(common.radius, fc, "radius", DEFAULT_PLOT_RADIUS)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Loads every `*.txt` plot file under `dir` (ignoring `*.truth.txt`
/// sidecars), sorted by file name so dataset order is reproducible.
fn load_dataset(dir: &Path, radius: f64) -> Result<Vec<Plot>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".txt") && !name.ends_with(".truth.txt")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Data(format!("no plot files (*.txt) in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            read_plot_file(p, radius).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        })
        .collect()
}

fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Builds an evaluation/bench method from flags plus an optional bundle.
fn resolve_method<'a>(
    method: &Option<String>,
    model: &'a Option<SavedModel>,
    rules: &RuleArgs,
    fc: &FileConfig,
    raster_size: Option<usize>,
    neighborhood_radius: Option<f64>,
) -> Result<Method<'a>, CliError> {
    let tree_rules = TreeRules {
        lower_max: pick(rules.lower_max, fc, "lower_max", TreeRules::default().lower_max)?,
        medium_max: pick(rules.medium_max, fc, "medium_max", TreeRules::default().medium_max)?,
        ndvi_threshold: pick(
            rules.ndvi_threshold,
            fc,
            "ndvi_threshold",
            TreeRules::default().ndvi_threshold,
        )?,
    };
    tree_rules.validate()?;
    let name = match method.as_deref() {
        Some(m) => m.to_string(),
        None => match model {
            Some(SavedModel::Occupancy(_)) => "ours".into(),
            Some(SavedModel::Direct(_)) => "direct".into(),
            None => "handcrafted".into(),
        },
    };
    match name.as_str() {
        "ours" => match model {
            Some(SavedModel::Occupancy(m)) => Ok(Method::Occupancy(m)),
            Some(SavedModel::Direct(_)) => {
                Err(CliError::Data("bundle holds a direct-regression model, not \"ours\"".into()))
            }
            None => Err(CliError::Usage("--method ours requires --model".into())),
        },
        "direct" => match model {
            Some(SavedModel::Direct(m)) => Ok(Method::Direct(m)),
            Some(SavedModel::Occupancy(_)) => {
                Err(CliError::Data("bundle holds an occupancy model, not \"direct\"".into()))
            }
            None => Err(CliError::Usage("--method direct requires --model".into())),
        },
        "handcrafted" => Ok(Method::Handcrafted {
            rules: tree_rules,
            raster_size: pick(raster_size, fc, "raster_size", 32)?,
            neighborhood_radius: pick(
                neighborhood_radius,
                fc,
                "neighborhood_radius",
                DEFAULT_NEIGHBORHOOD_RADIUS,
            )?,
        }),
        other => Err(CliError::Usage(format!(
            "unknown method {other:?} (expected ours, handcrafted, or direct)"
        ))),
    }
}

fn load_optional_model(path: &Option<PathBuf>) -> Result<Option<SavedModel>, CliError> {
    match path {
        Some(dir) => Ok(Some(load_model(dir)?)),
        None => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Synth(a) => run_synth(a),
        Cmd::FitGamma(a) => run_fit_gamma(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Infer(a) => run_infer(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Bench(a) => run_bench(a),
        Cmd::ExportRaster(a) => run_export_raster(a),
        Cmd::Convert(a) => run_convert(a),
    }
}

fn run_synth(a: SynthArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let seed = resolve_seed(a.common.seed, &fc)?;
    let radius = resolve_radius(&a.common, &fc)?;
    if a.plots == 0 {
        return Err(CliError::Usage("--plots must be at least 1".into()));
    }
    std::fs::create_dir_all(&a.out)?;
    for i in 0..a.plots {
        let spec = SceneSpec::random(derive_seed(seed, STREAM_SYNTH, i as u64), radius);
        let scene = generate_plot(&spec)?;
        let mut plot = scene.plot.clone();
        plot.labels = Some(scene.occupancy);
        write_plot_file(&a.out.join(format!("{}.txt", plot.plot_id)), &plot)?;
        write_text(
            &a.out.join(format!("{}.truth.txt", plot.plot_id)),
            &write_truth_sidecar(&scene),
        )?;
    }
    println!("wrote {} plots to {}", a.plots, a.out.display());
    Ok(())
}

fn run_fit_gamma(a: FitGammaArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let radius = resolve_radius(&a.common, &fc)?;
    let neighborhood =
        pick(a.neighborhood_radius, &fc, "neighborhood_radius", DEFAULT_NEIGHBORHOOD_RADIUS)?;
    let tol = pick(a.tol, &fc, "ecm_tol", 1e-6)?;
    let max_iter = pick(a.max_iter, &fc, "ecm_max_iter", 200)?;

    let dataset = load_dataset(&a.data, radius)?;
    let mut zs = Vec::new();
    for plot in &dataset {
        let plot = normalize_elevation(plot.clone(), neighborhood);
        zs.extend(
            plot.z_norm
                .as_ref()
                .unwrap()
                .iter()
                .map(|&z| z.max(crate::train::ELEVATION_NOISE_FLOOR)),
        );
    }
    let init = GammaMixture::moment_init(&zs, crate::train::ELEVATION_SPLIT);
    let fit = ecm_fit(&zs, init, tol, max_iter)?;
    save_mixture(&a.out, &fit.mixture)?;
    print!("{}", format_mixture(&fit.mixture));
    println!(
        "fitted on {} elevations in {} iterations, final log-likelihood {:.6}",
        zs.len(),
        fit.iterations,
        fit.log_likelihood.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let seed = resolve_seed(a.common.seed, &fc)?;
    let radius = resolve_radius(&a.common, &fc)?;
    let d = TrainConfig::default();
    let method = a.method.as_deref().unwrap_or("ours");
    let dataset = load_dataset(&a.data, radius)?;

    match method {
        "ours" => {
            let cfg = TrainConfig {
                raster_size: pick(a.raster_size, &fc, "raster_size", d.raster_size)?,
                batch_size: pick(a.batch_size, &fc, "batch_size", d.batch_size)?,
                epochs: pick(a.epochs, &fc, "epochs", d.epochs)?,
                learning_rate: pick(a.learning_rate, &fc, "learning_rate", d.learning_rate)?,
                seed,
                subsample: pick(a.subsample, &fc, "subsample", d.subsample)?,
                split: pick(a.split, &fc, "split", d.split)?,
                loss: LossConfig {
                    entropy_weight: pick(
                        a.entropy_weight,
                        &fc,
                        "entropy_weight",
                        d.loss.entropy_weight,
                    )?,
                    likelihood_weight: pick(
                        a.likelihood_weight,
                        &fc,
                        "likelihood_weight",
                        d.loss.likelihood_weight,
                    )?,
                },
                arch: d.arch.clone(),
                neighborhood_radius: pick(
                    a.neighborhood_radius,
                    &fc,
                    "neighborhood_radius",
                    d.neighborhood_radius,
                )?,
                ecm_tol: pick(None, &fc, "ecm_tol", d.ecm_tol)?,
                ecm_max_iter: pick(None, &fc, "ecm_max_iter", d.ecm_max_iter)?,
            };
            let (model, report) = train(&dataset, &cfg)?;
            save_occupancy_model(&a.out, &model)?;
            save_report(&a.out, &report)?;
            println!(
                "trained occupancy model on {} plots ({} train / {} validation)",
                dataset.len(),
                report.train_plots,
                report.val_plots
            );
            println!(
                "final validation MAE: lower {:.2}% medium {:.2}% higher {:.2}%",
                report.final_val_mae[0] * 100.0,
                report.final_val_mae[1] * 100.0,
                report.final_val_mae[2] * 100.0
            );
            println!("bundle written to {}", a.out.display());
            Ok(())
        }
        "direct" => {
            let dd = DirectTrainConfig::default();
            let cfg = DirectTrainConfig {
                batch_size: pick(a.batch_size, &fc, "batch_size", dd.batch_size)?,
                epochs: pick(a.epochs, &fc, "epochs", dd.epochs)?,
                learning_rate: pick(a.learning_rate, &fc, "learning_rate", dd.learning_rate)?,
                seed,
                subsample: pick(a.subsample, &fc, "subsample", dd.subsample)?,
                split: pick(a.split, &fc, "split", dd.split)?,
                arch: dd.arch.clone(),
                neighborhood_radius: pick(
                    a.neighborhood_radius,
                    &fc,
                    "neighborhood_radius",
                    dd.neighborhood_radius,
                )?,
            };
            let (model, report) = direct_regression_train(&dataset, &cfg)?;
            save_direct_model(&a.out, &model)?;
            write_text(
                &a.out.join("report.json"),
                &serde_json::to_string_pretty(&report)
                    .map_err(|e| CliError::Data(e.to_string()))?,
            )?;
            write_text(&a.out.join("losses.csv"), &regression_losses_csv(&report))?;
            println!(
                "trained direct-regression model on {} plots ({} train / {} validation)",
                dataset.len(),
                report.train_plots,
                report.val_plots
            );
            println!(
                "final validation MAE: lower {:.2}% medium {:.2}% higher {:.2}%",
                report.final_val_mae[0] * 100.0,
                report.final_val_mae[1] * 100.0,
                report.final_val_mae[2] * 100.0
            );
            println!("bundle written to {}", a.out.display());
            Ok(())
        }
        "handcrafted" => Err(CliError::Usage(
            "the handcrafted method has no trainable parameters; use `eval --method handcrafted`"
                .into(),
        )),
        other => {
            Err(CliError::Usage(format!("unknown method {other:?} (expected ours or direct)")))
        }
    }
}

fn regression_losses_csv(report: &RegressionReport) -> String {
    let mut out = String::from("epoch,train_mae,val_mae_avg\n");
    for (i, e) in report.epochs.iter().enumerate() {
        let val_avg = (e.val_mae[0] + e.val_mae[1] + e.val_mae[2]) / 3.0;
        out.push_str(&format!("{},{:.6},{:.6}\n", i + 1, e.train_mae, val_avg));
    }
    out
}

fn occupancy_line(plot_id: &str, occ: [f64; 3]) -> String {
    format!("{plot_id} {:.6} {:.6} {:.6}\n", occ[0], occ[1], occ[2])
}

fn run_infer(a: InferArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let radius = resolve_radius(&a.common, &fc)?;
    let model = load_model(&a.model)?;
    let plot = read_plot_file(&a.plot, radius)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.plot.display())))?;

    let wants_rasters =
        a.export_ppm.is_some() || a.export_pgm.is_some() || a.export_pixels.is_some();
    let line = match &model {
        SavedModel::Occupancy(m) => {
            let inference = infer(m, &plot)?;
            if inference.clamped > 0 {
                eprintln!(
                    "note: {} feature values fell outside the training range and were clamped",
                    inference.clamped
                );
            }
            if let Some(path) = &a.export_ppm {
                write_text(path, &to_composite_ppm(&inference.projection.rasters))?;
            }
            if let Some(prefix) = &a.export_pgm {
                for (s, stratum) in Stratum::ALL.iter().enumerate() {
                    let path =
                        PathBuf::from(format!("{}{}.pgm", prefix.display(), stratum.short_name()));
                    write_text(&path, &to_pgm(&inference.projection.rasters[s]))?;
                }
            }
            if let Some(path) = &a.export_pixels {
                write_text(path, &to_pixels_csv(&inference.projection.rasters))?;
            }
            occupancy_line(&plot.plot_id, inference.occupancy.as_array())
        }
        SavedModel::Direct(m) => {
            if wants_rasters {
                return Err(CliError::Usage(
                    "raster export requires an occupancy model; this bundle is direct-regression"
                        .into(),
                ));
            }
            let (occ, clamped) = crate::baselines::predict_direct(m, &plot)?;
            if clamped > 0 {
                eprintln!(
                    "note: {clamped} feature values fell outside the training range and were clamped"
                );
            }
            occupancy_line(&plot.plot_id, occ.as_array())
        }
    };
    print!("{line}");
    if let Some(path) = &a.out {
        write_text(path, &line)?;
    }
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let radius = resolve_radius(&a.common, &fc)?;
    let dataset = load_dataset(&a.data, radius)?;
    let model = load_optional_model(&a.model)?;
    let method =
        resolve_method(&a.method, &model, &a.rules, &fc, a.raster_size, a.neighborhood_radius)?;
    let report = evaluate(&method, &dataset)?;
    print!("{}", format_report_table(std::slice::from_ref(&report)));
    if let Some(path) = &a.csv {
        write_text(path, &report_csv(std::slice::from_ref(&report)))?;
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let seed = resolve_seed(a.common.seed, &fc)?;
    let radius = resolve_radius(&a.common, &fc)?;
    let dataset = load_dataset(&a.data, radius)?;
    let model = load_optional_model(&a.model)?;
    let method =
        resolve_method(&a.method, &model, &a.rules, &fc, a.raster_size, a.neighborhood_radius)?;
    let reps = a.reps.unwrap_or(5);
    let subsample = pick(a.subsample, &fc, "subsample", DEFAULT_SUBSAMPLE)?;
    let threads = a.threads.unwrap_or(1);
    let report = benchmark_throughput(&method, &dataset, reps, subsample, threads, seed)?;
    print!("{}", format_throughput(&report));
    Ok(())
}

fn run_export_raster(a: ExportRasterArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let radius = resolve_radius(&a.common, &fc)?;
    let model = match load_model(&a.model)? {
        SavedModel::Occupancy(m) => m,
        SavedModel::Direct(_) => {
            return Err(CliError::Usage(
                "raster export requires an occupancy model; this bundle is direct-regression"
                    .into(),
            ))
        }
    };
    let plot = read_plot_file(&a.plot, radius)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.plot.display())))?;
    let inference = infer(&model, &plot)?;
    std::fs::create_dir_all(&a.out)?;
    let all = !(a.pgm || a.ppm || a.pixels);
    if all || a.pgm {
        for (s, stratum) in Stratum::ALL.iter().enumerate() {
            write_text(
                &a.out.join(format!("{}.pgm", stratum.short_name())),
                &to_pgm(&inference.projection.rasters[s]),
            )?;
        }
    }
    if all || a.ppm {
        write_text(&a.out.join("composite.ppm"), &to_composite_ppm(&inference.projection.rasters))?;
    }
    if all || a.pixels {
        write_text(&a.out.join("pixels.csv"), &to_pixels_csv(&inference.projection.rasters))?;
    }
    println!(
        "{} {:.6} {:.6} {:.6} -> {}",
        plot.plot_id,
        inference.occupancy.lower,
        inference.occupancy.medium,
        inference.occupancy.higher,
        a.out.display()
    );
    Ok(())
}

fn run_convert(a: ConvertArgs) -> Result<(), CliError> {
    let fc = FileConfig::load(a.common.config.as_deref())?;
    let radius = resolve_radius(&a.common, &fc)?;
    let text = std::fs::read_to_string(&a.input)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", a.input.display())))?;

    // Keep content lines; drop blanks and # comments, which loose exports
    // often carry.
    let lines: Vec<&str> =
        text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
    if lines.is_empty() {
        return Err(CliError::Data(format!("{}: no content lines", a.input.display())));
    }

    let has_header = lines[0].split_whitespace().count() == 4;
    let canonical = if has_header {
        if a.id.is_some() || a.labels.is_some() {
            return Err(CliError::Usage(
                "--id/--labels only apply to headerless input; this file has a header".into(),
            ));
        }
        lines.join("\n") + "\n"
    } else {
        let id = match &a.id {
            Some(id) => id.clone(),
            None => a.input.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string(),
        };
        let header = match &a.labels {
            Some(l) => format!("{id} {} {} {}", l[0], l[1], l[2]),
            None => format!("{id} - - -"),
        };
        let mut out = header;
        for line in &lines {
            out.push('\n');
            out.push_str(line);
        }
        out.push('\n');
        out
    };

    let plot = parse_plot_with_radius(&canonical, radius)?;
    write_plot_file(&a.out, &plot)?;
    // Round-trip the written file as a self-check before reporting success.
    let back = read_plot_file(&a.out, radius)?;
    if back.points.len() != plot.points.len() {
        return Err(CliError::Data("converted file failed to re-parse identically".into()));
    }
    println!(
        "converted {} points ({} labels) -> {}",
        plot.points.len(),
        if plot.labels.is_some() { "with" } else { "no" },
        a.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        std::iter::once("strata".to_string()).chain(list.iter().map(|s| s.to_string())).collect()
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(dispatch(args(&["--help"])), 0);
        assert_eq!(dispatch(args(&["--version"])), 0);
        assert_eq!(dispatch(args(&["synth", "--help"])), 0);
    }

    #[test]
    fn unknown_subcommand_and_flags_exit_one() {
        assert_eq!(dispatch(args(&["frobnicate"])), 1);
        assert_eq!(dispatch(args(&["synth", "--bogus"])), 1);
        assert_eq!(dispatch(args(&[])), 1);
    }

    #[test]
    fn config_file_rejects_unknown_and_duplicate_keys() {
        let dir = std::env::temp_dir().join(format!("strata-cliconf-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "unknown_key = 3\n").unwrap();
        assert!(matches!(FileConfig::load(Some(&path)), Err(CliError::Usage(_))));
        std::fs::write(&path, "epochs = 3\nepochs = 4\n").unwrap();
        assert!(matches!(FileConfig::load(Some(&path)), Err(CliError::Usage(_))));
        std::fs::write(&path, "# comment\n\nepochs = 3\nsplit = 0.5\n").unwrap();
        let fc = FileConfig::load(Some(&path)).unwrap();
        assert_eq!(fc.get::<usize>("epochs").unwrap(), Some(3));
        assert_eq!(fc.get::<f64>("split").unwrap(), Some(0.5));
        assert_eq!(fc.get::<usize>("batch_size").unwrap(), None);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn seed_precedence_flag_over_file_over_default() {
        let dir = std::env::temp_dir().join(format!("strata-cliseed-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("seed.cfg");
        std::fs::write(&path, "seed = 11\n").unwrap();
        let fc = FileConfig::load(Some(&path)).unwrap();
        assert_eq!(resolve_seed(Some(5), &fc).unwrap(), 5);
        assert_eq!(resolve_seed(None, &fc).unwrap(), 11);
        let empty = FileConfig(HashMap::new());
        // The env fallback is covered by the binary integration tests to
        // avoid mutating process-global state here.
        if std::env::var("STRATA_SEED").is_err() {
            assert_eq!(resolve_seed(None, &empty).unwrap(), DEFAULT_SEED);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn pick_prefers_flag_then_file() {
        let mut map = HashMap::new();
        map.insert("epochs".to_string(), "9".to_string());
        let fc = FileConfig(map);
        assert_eq!(pick(Some(3usize), &fc, "epochs", 1).unwrap(), 3);
        assert_eq!(pick(None::<usize>, &fc, "epochs", 1).unwrap(), 9);
        assert_eq!(pick(None::<usize>, &fc, "batch_size", 1).unwrap(), 1);
    }
}
