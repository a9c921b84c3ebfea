//! Held-out evaluation and throughput measurement, uniform across the three
//! prediction methods.
//!
//! Every method maps a plot to three occupancy ratios; [`evaluate`] scores a
//! labeled dataset with per-stratum mean absolute error, and
//! [`benchmark_throughput`] times the end-to-end single-plot path
//! (subsample → scale → network → projection → aggregation) excluding file
//! I/O and ground normalization.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{forward_regression, handcrafted_classify, DirectModel, TreeRules};
use crate::plotio::{apply_scaler, normalize_elevation, sample_indices, Plot, PlotIoError};
use crate::pointnet::{forward, NetError};
use crate::raster::{aggregate_all, project, RasterError, StratumOccupancy};
use crate::rng::{derive_seed, STREAM_SUBSAMPLE};
use crate::train::{infer, TrainError, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("plot {0} has no occupancy labels")]
    Unlabeled(String),
    #[error("no plots to evaluate")]
    EmptyDataset,
    #[error("repetitions and thread count must be positive")]
    BadBenchConfig,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    PlotIo(#[from] PlotIoError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// A prediction method under evaluation.
pub enum Method<'a> {
    /// The trained per-point classifier with raster projection.
    Occupancy(&'a TrainedModel),
    /// The threshold cascade, projected and aggregated the same way.
    Handcrafted { rules: TreeRules, raster_size: usize, neighborhood_radius: f64 },
    /// The plot-level regression network.
    Direct(&'a DirectModel),
}

impl Method<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Occupancy(_) => "ours",
            Method::Handcrafted { .. } => "handcrafted",
            Method::Direct(_) => "direct",
        }
    }
}

/// Predicts the three ratios for one plot with the given method (full point
/// cloud, no subsampling).
pub fn predict(method: &Method, plot: &Plot) -> Result<StratumOccupancy, EvalError> {
    match method {
        Method::Occupancy(model) => Ok(infer(model, plot)?.occupancy),
        Method::Handcrafted { rules, raster_size, neighborhood_radius } => {
            let normalized;
            let plot = if plot.z_norm.is_some() {
                plot
            } else {
                normalized = normalize_elevation(plot.clone(), *neighborhood_radius);
                &normalized
            };
            let probs = handcrafted_classify(plot, rules)?;
            let coords: Vec<(f64, f64)> = plot.points.iter().map(|p| (p.x, p.y)).collect();
            let proj = project(&probs, &coords, *raster_size, plot.radius)?;
            Ok(aggregate_all(&proj))
        }
        Method::Direct(model) => Ok(crate::baselines::predict_direct(model, plot)?.0),
    }
}

/// Per-stratum mean absolute error of one method over a labeled dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Mean absolute occupancy error per stratum (fractions in `[0, 1]`).
    pub mae: [f64; 3],
    /// Average of the three per-stratum errors.
    pub average: f64,
    pub plots: usize,
}

/// Scores `method` on every labeled plot; errors are averaged in dataset
/// order, so permuting the dataset changes the result only by float
/// round-off.
pub fn evaluate(method: &Method, dataset: &[Plot]) -> Result<EvalReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut mae = [0.0; 3];
    for plot in dataset {
        let labels = plot.labels.ok_or_else(|| EvalError::Unlabeled(plot.plot_id.clone()))?;
        let occ = predict(method, plot)?.as_array();
        for s in 0..3 {
            mae[s] += (occ[s] - labels[s]).abs();
        }
    }
    for m in &mut mae {
        *m /= dataset.len() as f64;
    }
    let average = (mae[0] + mae[1] + mae[2]) / 3.0;
    Ok(EvalReport { method: method.name().to_string(), mae, average, plots: dataset.len() })
}

/// Renders evaluation reports as an aligned table (errors in percent).
pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>6}\n",
        "method", "lower%", "medium%", "higher%", "avg%", "plots"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>6}\n",
            r.method,
            r.mae[0] * 100.0,
            r.mae[1] * 100.0,
            r.mae[2] * 100.0,
            r.average * 100.0,
            r.plots
        ));
    }
    out
}

/// Renders evaluation reports as CSV (errors as fractions).
pub fn report_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method,mae_lower,mae_medium,mae_higher,mae_average,plots\n");
    for r in reports {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{}\n",
            r.method, r.mae[0], r.mae[1], r.mae[2], r.average, r.plots
        ));
    }
    out
}

/// Result of a throughput run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub method: String,
    /// Median plots per second over the repetitions.
    pub plots_per_second: f64,
    pub repetitions: usize,
    pub threads: usize,
    pub subsample: usize,
    pub plots: usize,
}

/// Times end-to-end single-plot prediction over the dataset.
///
/// Plots are normalized up front (untimed); each repetition then subsamples
/// `subsample` points per plot, scales, runs the method, and aggregates —
/// the timed region.  The reported rate is the median over repetitions.
/// With `threads > 1` the plots of one repetition are processed on a local
/// thread pool.
pub fn benchmark_throughput(
    method: &Method,
    dataset: &[Plot],
    repetitions: usize,
    subsample: usize,
    threads: usize,
    seed: u64,
) -> Result<ThroughputReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    if repetitions == 0 || threads == 0 || subsample == 0 {
        return Err(EvalError::BadBenchConfig);
    }
    let radius = match method {
        Method::Occupancy(m) => m.neighborhood_radius,
        Method::Handcrafted { neighborhood_radius, .. } => *neighborhood_radius,
        Method::Direct(m) => m.neighborhood_radius,
    };
    let plots: Vec<Plot> = dataset.iter().map(|p| normalize_elevation(p.clone(), radius)).collect();

    let one_plot = |plot: &Plot, sub_seed: u64| -> Result<StratumOccupancy, EvalError> {
        let idx = sample_indices(plot.points.len(), subsample, sub_seed);
        match method {
            Method::Occupancy(model) => {
                let (features, _) = apply_scaler(&model.scaler, plot, &idx)?;
                let cache = forward(&model.params, &features)?;
                let coords: Vec<(f64, f64)> = idx
                    .iter()
                    .map(|&i| (plot.points[i as usize].x, plot.points[i as usize].y))
                    .collect();
                let proj = project(&cache.probs, &coords, model.raster_size, plot.radius)?;
                Ok(aggregate_all(&proj))
            }
            Method::Handcrafted { rules, raster_size, .. } => {
                let sub = subsampled_plot(plot, &idx);
                let probs = handcrafted_classify(&sub, rules)?;
                let coords: Vec<(f64, f64)> = sub.points.iter().map(|p| (p.x, p.y)).collect();
                let proj = project(&probs, &coords, *raster_size, plot.radius)?;
                Ok(aggregate_all(&proj))
            }
            Method::Direct(model) => {
                let (features, _) = apply_scaler(&model.scaler, plot, &idx)?;
                let cache = forward_regression(&model.net, &features)?;
                Ok(StratumOccupancy::from_array(cache.pred))
            }
        }
    };

    let mut rates = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let seeds: Vec<u64> = (0..plots.len())
            .map(|i| derive_seed(seed, STREAM_SUBSAMPLE, (rep * plots.len() + i) as u64))
            .collect();
        let start = Instant::now();
        if threads > 1 {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|_| EvalError::BadBenchConfig)?;
            pool.install(|| {
                plots
                    .par_iter()
                    .zip(&seeds)
                    .map(|(plot, &s)| one_plot(plot, s).map(|_| ()))
                    .collect::<Result<Vec<()>, EvalError>>()
            })?;
        } else {
            for (plot, &s) in plots.iter().zip(&seeds) {
                one_plot(plot, s)?;
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        rates.push(plots.len() as f64 / elapsed.max(1e-12));
    }
    rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let plots_per_second = if rates.len() % 2 == 1 {
        rates[rates.len() / 2]
    } else {
        0.5 * (rates[rates.len() / 2 - 1] + rates[rates.len() / 2])
    };
    Ok(ThroughputReport {
        method: method.name().to_string(),
        plots_per_second,
        repetitions,
        threads,
        subsample,
        plots: dataset.len(),
    })
}

/// A copy of `plot` restricted to `indices` (duplicates allowed), keeping
/// normalized elevations aligned.
fn subsampled_plot(plot: &Plot, indices: &[u32]) -> Plot {
    Plot {
        plot_id: plot.plot_id.clone(),
        radius: plot.radius,
        points: indices.iter().map(|&i| plot.points[i as usize]).collect(),
        z_norm: plot.z_norm.as_ref().map(|z| indices.iter().map(|&i| z[i as usize]).collect()),
        labels: plot.labels,
    }
}

/// Renders a throughput report as one line.
pub fn format_throughput(report: &ThroughputReport) -> String {
    format!(
        "{}: {:.2} plots/s (median of {} reps, {} plots, subsample {}, {} thread{})\n",
        report.method,
        report.plots_per_second,
        report.repetitions,
        report.plots,
        report.subsample,
        report.threads,
        if report.threads == 1 { "" } else { "s" }
    )
}
