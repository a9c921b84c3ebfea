//! Training, inference, and model-bundle persistence.
//!
//! [`train`] fits the per-point classifier from plot-level occupancy ratios
//! alone: each optimization step pushes a subsampled plot through the network,
//! projects class probabilities onto the occupancy rasters, and descends the
//! composite loss (ratio error + raster entropy + elevation likelihood).
//! [`infer`] runs a trained model on a full plot.  A model bundle is a
//! directory holding the network, optimizer state, feature scaler, and
//! elevation mixture, written by [`save_occupancy_model`] /
//! [`save_direct_model`] and read back by [`load_model`].

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{DirectModel, RegressionNet};
use crate::gamma::{
    ecm_fit, elevation_nll, load_mixture, save_mixture, GammaError, GammaMixture, ELEVATION_EPS,
};
use crate::loss::{data_loss, entropy_loss, total_loss, LossConfig};
use crate::mat::Mat;
use crate::plotio::{
    all_indices, apply_scaler, fit_scaler, normalize_elevation, subsample, FeatureScaler, Plot,
    PlotIoError, DEFAULT_NEIGHBORHOOD_RADIUS, DEFAULT_SUBSAMPLE, FEATURE_COUNT, Z_NORM_FEATURE,
};
use crate::pointnet::{
    adam_step, backward, forward, AdamState, Arch, NetError, NetParams, ParamSet,
};
use crate::raster::{
    aggregate_all, mask_count, project, raster_backward, Projection, RasterError, StratumOccupancy,
};
use crate::rng::{
    derive_seed, rng_from_seed, STREAM_SHUFFLE, STREAM_SPLIT, STREAM_SUBSAMPLE, STREAM_VALSAMPLE,
};

/// Version written into `model.json`; bumped on breaking layout changes.
pub const BUNDLE_VERSION: u32 = 1;

/// Half-open boundary between the two elevation regimes (metres of
/// normalized height) used to seed the mixture fit.
pub const ELEVATION_SPLIT: f64 = 0.5;

/// Sensor-noise height in metres: normalized elevations below this are
/// indistinguishable from ground-return noise and are floored before they
/// enter the elevation mixture (fit and likelihood scoring alike).
pub const ELEVATION_NOISE_FLOOR: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("plot {0} has no occupancy labels")]
    Unlabeled(String),
    #[error("need at least {need} labeled plots, got {got}")]
    TooFewPlots { need: usize, got: usize },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model bundle is invalid: {0}")]
    BadBundle(String),
    #[error(transparent)]
    Gamma(#[from] GammaError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    PlotIo(#[from] PlotIoError),
    #[error("model serialization failed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Hyper-parameters of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Raster side length in pixels.
    pub raster_size: usize,
    /// Plots per optimizer step.
    pub batch_size: usize,
    /// Passes over the training split.
    pub epochs: usize,
    /// ADAM step size.
    pub learning_rate: f64,
    /// Master seed; every random choice in the run derives from it.
    pub seed: u64,
    /// Points drawn per plot per epoch.
    pub subsample: usize,
    /// Fraction of plots used for training; the rest validate.
    pub split: f64,
    /// Weights of the entropy and likelihood terms.
    pub loss: LossConfig,
    /// Network shape.
    pub arch: Arch,
    /// Radius of the cylindrical neighborhood for ground normalization.
    pub neighborhood_radius: f64,
    /// Mixture-fit convergence threshold on the log-likelihood delta.
    pub ecm_tol: f64,
    /// Mixture-fit iteration cap.
    pub ecm_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            raster_size: 32,
            batch_size: 20,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 7,
            subsample: DEFAULT_SUBSAMPLE,
            split: 0.8,
            loss: LossConfig::default(),
            arch: Arch::default(),
            neighborhood_radius: DEFAULT_NEIGHBORHOOD_RADIUS,
            ecm_tol: 1e-6,
            ecm_max_iter: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.into()));
        if self.raster_size == 0 || self.raster_size > 1024 {
            return bad("raster size must be in 1..=1024");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if self.epochs == 0 {
            return bad("epoch count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if self.subsample == 0 {
            return bad("subsample size must be positive");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split fraction must lie strictly between 0 and 1");
        }
        if !(self.neighborhood_radius > 0.0 && self.neighborhood_radius.is_finite()) {
            return bad("neighborhood radius must be positive and finite");
        }
        if self.ecm_tol.is_nan() || self.ecm_tol <= 0.0 || self.ecm_max_iter == 0 {
            return bad("mixture tolerance and iteration cap must be positive");
        }
        self.arch.validate()?;
        if self.arch.input_dim() != FEATURE_COUNT {
            return bad("network input width must match the feature count");
        }
        Ok(())
    }
}

/// Loss components and validation error after one epoch; losses are averages
/// over the training split, `val_mae` is the mean absolute occupancy error
/// per stratum over the validation split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub data_loss: f64,
    pub entropy_loss: f64,
    pub likelihood_loss: f64,
    pub total_loss: f64,
    pub val_mae: [f64; 3],
}

/// Full record of a training run; two runs with equal inputs and
/// configuration produce bitwise-equal reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_plots: usize,
    pub val_plots: usize,
    /// Identifiers of the held-out validation plots, in split order.
    pub val_plot_ids: Vec<String>,
    pub mixture: GammaMixture,
    pub epochs: Vec<EpochStats>,
    pub final_val_mae: [f64; 3],
}

/// A trained occupancy model plus everything needed to run or resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub params: NetParams,
    pub opt: AdamState<NetParams>,
    pub mixture: GammaMixture,
    pub scaler: FeatureScaler,
    pub raster_size: usize,
    pub neighborhood_radius: f64,
}

/// Output of running a model on one plot.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Per-point class probabilities, `N × 4`.
    pub probs: Mat,
    /// Pixel rasters and the point partition behind them.
    pub projection: Projection,
    /// Plot-level occupancy ratios.
    pub occupancy: StratumOccupancy,
    /// Feature entries clamped by the scaler (drift indicator).
    pub clamped: usize,
}

/// Normalized plots split into train/validation, plus the feature scaler
/// fitted on the training split only.
pub(crate) struct PreparedDataset {
    pub train: Vec<Plot>,
    pub val: Vec<Plot>,
    pub scaler: FeatureScaler,
}

/// Normalizes every plot, splits them at `split` under a dedicated seed
/// stream, and fits the scaler on the training split.
pub(crate) fn prepare_dataset(
    dataset: &[Plot],
    split: f64,
    seed: u64,
    neighborhood_radius: f64,
) -> Result<PreparedDataset, TrainError> {
    if dataset.len() < 2 {
        return Err(TrainError::TooFewPlots { need: 2, got: dataset.len() });
    }
    for plot in dataset {
        if plot.labels.is_none() {
            return Err(TrainError::Unlabeled(plot.plot_id.clone()));
        }
    }
    let normalized: Vec<Plot> =
        dataset.iter().map(|p| normalize_elevation(p.clone(), neighborhood_radius)).collect();

    let mut order: Vec<usize> = (0..normalized.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_SPLIT, 0)));
    let n_train =
        ((normalized.len() as f64 * split).round() as usize).clamp(1, normalized.len() - 1);

    let train: Vec<Plot> = order[..n_train].iter().map(|&i| normalized[i].clone()).collect();
    let val: Vec<Plot> = order[n_train..].iter().map(|&i| normalized[i].clone()).collect();
    let scaler = fit_scaler(&train)?;
    Ok(PreparedDataset { train, val, scaler })
}

/// Scaled feature matrix, subsampled coordinates, and scaled normalized
/// elevations for one plot — the per-plot working set of a training step.
struct PlotBatch {
    features: Mat,
    coords: Vec<(f64, f64)>,
    elevations: Vec<f64>,
    radius: f64,
}

fn plot_batch(
    plot: &Plot,
    scaler: &FeatureScaler,
    indices: &[u32],
) -> Result<PlotBatch, TrainError> {
    let (features, _) = apply_scaler(scaler, plot, indices)?;
    let coords =
        indices.iter().map(|&i| (plot.points[i as usize].x, plot.points[i as usize].y)).collect();
    let floor = scaled_noise_floor(scaler);
    let elevations =
        (0..features.rows()).map(|i| features.get(i, Z_NORM_FEATURE).max(floor)).collect();
    Ok(PlotBatch { features, coords, elevations, radius: plot.radius })
}

/// Mean absolute occupancy error per stratum of `params` over fixed
/// validation batches.
fn validation_mae(
    params: &NetParams,
    batches: &[(PlotBatch, [f64; 3])],
    raster_size: usize,
) -> Result<[f64; 3], TrainError> {
    let mut mae = [0.0; 3];
    for (batch, labels) in batches {
        let cache = forward(params, &batch.features)?;
        let proj = project(&cache.probs, &batch.coords, raster_size, batch.radius)?;
        let occ = aggregate_all(&proj).as_array();
        for s in 0..3 {
            mae[s] += (occ[s] - labels[s]).abs();
        }
    }
    for m in &mut mae {
        *m /= batches.len().max(1) as f64;
    }
    Ok(mae)
}

/// The noise floor in scaled units, never below the numeric clip.
fn scaled_noise_floor(scaler: &FeatureScaler) -> f64 {
    scaler.scale(Z_NORM_FEATURE, ELEVATION_NOISE_FLOOR).max(ELEVATION_EPS)
}

/// Fits the elevation mixture on the scaled normalized elevations of every
/// training point, floored at the sensor-noise height.
///
/// The floor matters: elevation normalization makes each neighborhood's
/// lowest point exactly zero, and that spike sits many log-units below the
/// rest of the ground returns.  An unconstrained maximum-likelihood fit then
/// prefers a divergent shape-below-one component to explain it — which
/// scores ground points as vegetation and inverts the prior.  Flooring at
/// the noise height merges the spike into the ground blob.
fn fit_elevation_mixture(
    prep: &PreparedDataset,
    cfg: &TrainConfig,
) -> Result<GammaMixture, TrainError> {
    let floor = scaled_noise_floor(&prep.scaler);
    let mut zs = Vec::new();
    for plot in &prep.train {
        let (features, _) = apply_scaler(&prep.scaler, plot, &all_indices(plot))?;
        for i in 0..features.rows() {
            zs.push(features.get(i, Z_NORM_FEATURE).max(floor));
        }
    }
    let split = prep.scaler.scale(Z_NORM_FEATURE, ELEVATION_SPLIT).max(1e-3);
    let init = GammaMixture::moment_init(&zs, split);
    Ok(ecm_fit(&zs, init, cfg.ecm_tol, cfg.ecm_max_iter)?.mixture)
}

/// Trains an occupancy model from labeled plots.
///
/// Deterministic for a fixed dataset and configuration: the split, epoch
/// shuffles, per-plot subsamples, and weight init all derive from
/// `cfg.seed`, and all accumulation is sequential.
pub fn train(
    dataset: &[Plot],
    cfg: &TrainConfig,
) -> Result<(TrainedModel, TrainReport), TrainError> {
    cfg.validate()?;
    let prep = prepare_dataset(dataset, cfg.split, cfg.seed, cfg.neighborhood_radius)?;
    let mixture = fit_elevation_mixture(&prep, cfg)?;

    // Validation batches are fixed once so per-epoch errors are comparable.
    let val_batches: Vec<(PlotBatch, [f64; 3])> = prep
        .val
        .iter()
        .enumerate()
        .map(|(i, plot)| {
            let idx =
                subsample(plot, cfg.subsample, derive_seed(cfg.seed, STREAM_VALSAMPLE, i as u64));
            Ok((plot_batch(plot, &prep.scaler, &idx)?, plot.labels.unwrap()))
        })
        .collect::<Result<_, TrainError>>()?;

    let mut params = NetParams::init(&cfg.arch, cfg.seed)?;
    let mut opt = AdamState::new(&params, cfg.learning_rate);
    let n_train = prep.train.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64)));

        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            for &plot_idx in batch {
                let plot = &prep.train[plot_idx];
                let sub_seed =
                    derive_seed(cfg.seed, STREAM_SUBSAMPLE, (epoch * n_train + plot_idx) as u64);
                let idx = subsample(plot, cfg.subsample, sub_seed);
                let pb = plot_batch(plot, &prep.scaler, &idx)?;

                let cache = forward(&params, &pb.features)?;
                let proj = project(&cache.probs, &pb.coords, cfg.raster_size, plot.radius)?;
                let occ = aggregate_all(&proj);
                let labels = plot.labels.unwrap();

                let (l_data, d_sign) = data_loss(&occ, &labels);
                let (l_ent, d_ent) = entropy_loss(&proj.rasters);
                let (l_nll, d_nll) = elevation_nll(&mixture, &cache.probs, &pb.elevations)?;
                let l_total = total_loss(l_data, l_ent, l_nll, &cfg.loss);
                if !l_total.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
                }
                sums.0 += l_data;
                sums.1 += l_ent;
                sums.2 += l_nll;
                sums.3 += l_total;

                // Pixel-level upstream gradient: the ratio term spreads
                // d_sign over the in-disk mean, the entropy term is already
                // per-pixel.
                let m = mask_count(&proj.rasters[0]) as f64;
                let d_pixels: [Vec<f64>; 3] = std::array::from_fn(|s| {
                    proj.rasters[s]
                        .mask
                        .iter()
                        .zip(&d_ent[s])
                        .map(|(&in_disk, &de)| {
                            let data_part = if in_disk { d_sign[s] / m } else { 0.0 };
                            data_part + cfg.loss.entropy_weight * de
                        })
                        .collect()
                });
                let mut d_probs = raster_backward(&proj, &d_pixels, pb.features.rows())?;
                d_probs.add_scaled(&d_nll, cfg.loss.likelihood_weight);

                let plot_grads = backward(&params, &cache, &d_probs)?;
                for (g, pg) in grads.slices_mut().into_iter().zip(plot_grads.slices()) {
                    for (a, b) in g.iter_mut().zip(pg) {
                        *a += b;
                    }
                }
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grads.slices_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            adam_step(&mut params, &grads, &mut opt)?;
        }

        let inv = 1.0 / n_train as f64;
        let val_mae = validation_mae(&params, &val_batches, cfg.raster_size)?;
        epochs.push(EpochStats {
            data_loss: sums.0 * inv,
            entropy_loss: sums.1 * inv,
            likelihood_loss: sums.2 * inv,
            total_loss: sums.3 * inv,
            val_mae,
        });
    }

    let final_val_mae = epochs.last().map(|e| e.val_mae).unwrap_or([0.0; 3]);
    let report = TrainReport {
        train_plots: prep.train.len(),
        val_plots: prep.val.len(),
        val_plot_ids: prep.val.iter().map(|p| p.plot_id.clone()).collect(),
        mixture,
        epochs,
        final_val_mae,
    };
    let model = TrainedModel {
        params,
        opt,
        mixture,
        scaler: prep.scaler,
        raster_size: cfg.raster_size,
        neighborhood_radius: cfg.neighborhood_radius,
    };
    Ok((model, report))
}

/// Runs a trained model on one plot (every point, no subsampling).
///
/// Normalizes the plot first unless it already carries normalized
/// elevations.
pub fn infer(model: &TrainedModel, plot: &Plot) -> Result<Inference, TrainError> {
    let normalized;
    let plot = if plot.z_norm.is_some() {
        plot
    } else {
        normalized = normalize_elevation(plot.clone(), model.neighborhood_radius);
        &normalized
    };
    let (features, clamped) = apply_scaler(&model.scaler, plot, &all_indices(plot))?;
    let cache = forward(&model.params, &features)?;
    let coords: Vec<(f64, f64)> = plot.points.iter().map(|p| (p.x, p.y)).collect();
    let projection = project(&cache.probs, &coords, model.raster_size, plot.radius)?;
    let occupancy = aggregate_all(&projection);
    Ok(Inference { probs: cache.probs, projection, occupancy, clamped })
}

// ---------------------------------------------------------------------------
// Bundle persistence
// ---------------------------------------------------------------------------

/// Either flavor of trained model, as read back from a bundle.
pub enum SavedModel {
    Occupancy(TrainedModel),
    Direct(DirectModel),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ModelPayload {
    #[serde(rename = "occupancy")]
    Occupancy {
        raster_size: usize,
        neighborhood_radius: f64,
        params: NetParams,
        opt: AdamState<NetParams>,
    },
    #[serde(rename = "direct-regression")]
    Direct { neighborhood_radius: f64, net: RegressionNet, opt: AdamState<RegressionNet> },
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    payload: ModelPayload,
}

const FEATURE_NAMES: [&str; FEATURE_COUNT] =
    ["x", "y", "z", "red", "green", "blue", "nir", "intensity", "return_number", "z_norm"];

fn format_scaler(scaler: &FeatureScaler) -> String {
    let mut out = String::new();
    for (f, name) in FEATURE_NAMES.iter().enumerate() {
        out.push_str(&format!("{} {} {}\n", name, scaler.mins[f], scaler.maxs[f]));
    }
    out
}

fn parse_scaler(text: &str) -> Result<FeatureScaler, TrainError> {
    let mut mins = [0.0; FEATURE_COUNT];
    let mut maxs = [0.0; FEATURE_COUNT];
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != FEATURE_COUNT {
        return Err(TrainError::BadBundle(format!(
            "scaler.txt must have {FEATURE_COUNT} lines, got {}",
            lines.len()
        )));
    }
    for (f, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 || fields[0] != FEATURE_NAMES[f] {
            return Err(TrainError::BadBundle(format!("scaler.txt line {} malformed", f + 1)));
        }
        mins[f] = fields[1]
            .parse()
            .map_err(|_| TrainError::BadBundle(format!("scaler.txt line {} malformed", f + 1)))?;
        maxs[f] = fields[2]
            .parse()
            .map_err(|_| TrainError::BadBundle(format!("scaler.txt line {} malformed", f + 1)))?;
    }
    Ok(FeatureScaler { mins, maxs })
}

fn write_file(path: &Path, contents: &str) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

/// Writes an occupancy-model bundle: `model.json`, `scaler.txt`,
/// `mixture.txt`.
pub fn save_occupancy_model(dir: &Path, model: &TrainedModel) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let file = ModelFile {
        version: BUNDLE_VERSION,
        payload: ModelPayload::Occupancy {
            raster_size: model.raster_size,
            neighborhood_radius: model.neighborhood_radius,
            params: model.params.clone(),
            opt: model.opt.clone(),
        },
    };
    write_file(&dir.join("model.json"), &serde_json::to_string_pretty(&file)?)?;
    write_file(&dir.join("scaler.txt"), &format_scaler(&model.scaler))?;
    save_mixture(&dir.join("mixture.txt"), &model.mixture)?;
    Ok(())
}

/// Writes a direct-regression bundle: `model.json`, `scaler.txt`.
pub fn save_direct_model(dir: &Path, model: &DirectModel) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    let file = ModelFile {
        version: BUNDLE_VERSION,
        payload: ModelPayload::Direct {
            neighborhood_radius: model.neighborhood_radius,
            net: model.net.clone(),
            opt: model.opt.clone(),
        },
    };
    write_file(&dir.join("model.json"), &serde_json::to_string_pretty(&file)?)?;
    write_file(&dir.join("scaler.txt"), &format_scaler(&model.scaler))?;
    Ok(())
}

/// Reads a bundle written by either save function, validating the version,
/// the declared kind, and the network shapes.
pub fn load_model(dir: &Path) -> Result<SavedModel, TrainError> {
    let text = std::fs::read_to_string(dir.join("model.json"))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| TrainError::BadBundle(format!("model.json: {e}")))?;
    if file.version != BUNDLE_VERSION {
        return Err(TrainError::BadBundle(format!(
            "unsupported bundle version {} (expected {BUNDLE_VERSION})",
            file.version
        )));
    }
    let scaler = parse_scaler(&std::fs::read_to_string(dir.join("scaler.txt"))?)?;
    match file.payload {
        ModelPayload::Occupancy { raster_size, neighborhood_radius, params, opt } => {
            params.validate_shapes()?;
            if raster_size == 0 {
                return Err(TrainError::BadBundle("raster size must be positive".into()));
            }
            let mixture = load_mixture(&dir.join("mixture.txt"))?;
            Ok(SavedModel::Occupancy(TrainedModel {
                params,
                opt,
                mixture,
                scaler,
                raster_size,
                neighborhood_radius,
            }))
        }
        ModelPayload::Direct { neighborhood_radius, net, opt } => {
            net.validate_shapes()?;
            Ok(SavedModel::Direct(DirectModel { net, opt, scaler, neighborhood_radius }))
        }
    }
}

/// Renders the per-epoch loss table as CSV.
pub fn losses_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,l_data,l_entropy,l_likelihood,total,val_mae_avg\n");
    for (i, e) in report.epochs.iter().enumerate() {
        let val_avg = (e.val_mae[0] + e.val_mae[1] + e.val_mae[2]) / 3.0;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            i + 1,
            e.data_loss,
            e.entropy_loss,
            e.likelihood_loss,
            e.total_loss,
            val_avg
        ));
    }
    out
}

/// Writes `report.json` and `losses.csv` next to a bundle.
pub fn save_report(dir: &Path, report: &TrainReport) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir)?;
    write_file(&dir.join("report.json"), &serde_json::to_string_pretty(report)?)?;
    write_file(&dir.join("losses.csv"), &losses_csv(report))?;
    Ok(())
}
