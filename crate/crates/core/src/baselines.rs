//! Reference predictors the learned model is compared against: a handcrafted
//! elevation/greenness decision cascade and a network that regresses the
//! three plot-level ratios directly (no per-point supervision signal, no
//! rasters).

use serde::{Deserialize, Serialize};

use crate::mat::Mat;
use crate::plotio::{
    all_indices, apply_scaler, subsample, FeatureScaler, Plot, PlotIoError, FEATURE_COUNT,
};
use crate::pointnet::{adam_step, relu_inplace, AdamState, NetError, ParamSet};
use crate::raster::StratumOccupancy;
use crate::rng::{
    derive_seed, rng_from_seed, STREAM_INIT, STREAM_SHUFFLE, STREAM_SUBSAMPLE, STREAM_VALSAMPLE,
};
use crate::train::{prepare_dataset, TrainError};

/// Thresholds of the handcrafted cascade: normalized-elevation bands first,
/// then greenness to separate low vegetation from bare soil.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeRules {
    /// Upper edge of the low band (metres of normalized elevation).
    pub lower_max: f64,
    /// Upper edge of the middle band.
    pub medium_max: f64,
    /// Minimum NDVI for a low point to count as vegetation.
    pub ndvi_threshold: f64,
}

impl Default for TreeRules {
    fn default() -> Self {
        TreeRules { lower_max: 0.5, medium_max: 1.5, ndvi_threshold: 0.3 }
    }
}

impl TreeRules {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lower_max > 0.0 && self.medium_max > self.lower_max) {
            return Err(TrainError::BadConfig("elevation bands must be ordered".into()));
        }
        if !(-1.0..=1.0).contains(&self.ndvi_threshold) {
            return Err(TrainError::BadConfig("NDVI threshold must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Normalized difference vegetation index; zero when both bands are zero.
pub fn ndvi(nir: f64, red: f64) -> f64 {
    let denom = nir + red;
    if denom == 0.0 {
        0.0
    } else {
        (nir - red) / denom
    }
}

/// Classifies every point of a normalized plot with the decision cascade,
/// returning one-hot class rows (`N × 4`, columns soil/lower/medium/higher).
///
/// Cascade: above `medium_max` → higher; in `[lower_max, medium_max]` →
/// medium; otherwise vegetation (lower) when NDVI clears the threshold, else
/// soil.
pub fn handcrafted_classify(plot: &Plot, rules: &TreeRules) -> Result<Mat, PlotIoError> {
    let z = plot.z_norm.as_ref().ok_or_else(|| PlotIoError::NotNormalized(plot.plot_id.clone()))?;
    let mut probs = Mat::zeros(plot.points.len(), 4);
    for (i, (p, &zn)) in plot.points.iter().zip(z).enumerate() {
        let class = if zn > rules.medium_max {
            3
        } else if zn >= rules.lower_max {
            2
        } else if ndvi(p.nir, p.red) >= rules.ndvi_threshold {
            1
        } else {
            0
        };
        probs.set(i, class, 1.0);
    }
    Ok(probs)
}

// ---------------------------------------------------------------------------
// Direct plot-level regression
// ---------------------------------------------------------------------------

/// Shape of the regression network: shared per-point encoder, channel-wise
/// max-pool, then a small head mapping the pooled feature to three ratios.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegArch {
    /// Encoder widths starting at the input dimension.
    pub encoder: Vec<usize>,
    /// Hidden widths of the head; the output layer (width 3) is implicit.
    pub head_hidden: Vec<usize>,
}

impl Default for RegArch {
    fn default() -> Self {
        RegArch { encoder: vec![FEATURE_COUNT, 32, 64], head_hidden: vec![32] }
    }
}

impl RegArch {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.encoder.len() < 2 || self.encoder.iter().chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(NetError::BadArch(
                "encoder needs at least two nonzero widths and the head nonzero widths".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    /// Width of the pooled feature vector.
    pub fn feature_dim(&self) -> usize {
        *self.encoder.last().unwrap()
    }

    /// Head widths including input (pooled feature) and output (3 ratios).
    pub fn head_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.feature_dim()];
        dims.extend_from_slice(&self.head_hidden);
        dims.push(3);
        dims
    }

    /// `(rows, cols)` of every weight matrix, encoder first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims: Vec<(usize, usize)> = self.encoder.windows(2).map(|w| (w[0], w[1])).collect();
        dims.extend(self.head_dims().windows(2).map(|w| (w[0], w[1])));
        dims
    }

    pub fn n_encoder_layers(&self) -> usize {
        self.encoder.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(r, c)| r * c + c).sum()
    }
}

/// Weights and biases of the regression network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionNet {
    pub arch: RegArch,
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl RegressionNet {
    /// Glorot-uniform weights, zero biases, from the shared init stream.
    pub fn init(arch: &RegArch, seed: u64) -> Result<RegressionNet, NetError> {
        arch.validate()?;
        use rand::Rng;
        let mut rng = rng_from_seed(derive_seed(seed, STREAM_INIT, 1));
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (rows, cols) in arch.layer_dims() {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
            weights.push(Mat::from_vec(rows, cols, data));
            biases.push(vec![0.0; cols]);
        }
        Ok(RegressionNet { arch: arch.clone(), weights, biases })
    }

    pub fn validate_shapes(&self) -> Result<(), NetError> {
        self.arch.validate()?;
        let dims = self.arch.layer_dims();
        if self.weights.len() != dims.len() || self.biases.len() != dims.len() {
            return Err(NetError::ShapeMismatch("layer count differs from architecture".into()));
        }
        for (l, &(rows, cols)) in dims.iter().enumerate() {
            if self.weights[l].rows() != rows
                || self.weights[l].cols() != cols
                || self.biases[l].len() != cols
            {
                return Err(NetError::ShapeMismatch(format!("layer {l} has wrong shape")));
            }
        }
        Ok(())
    }
}

impl ParamSet for RegressionNet {
    fn zeros_like(&self) -> Self {
        RegressionNet {
            arch: self.arch.clone(),
            weights: self.weights.iter().map(|w| Mat::zeros(w.rows(), w.cols())).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn slices(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .map(|w| w.data())
            .chain(self.biases.iter().map(|b| b.as_slice()))
            .collect()
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.data_mut())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
            .collect()
    }
}

/// Forward-pass record for [`backward_regression`].
#[derive(Clone, Debug)]
pub struct RegCache {
    pub input: Mat,
    /// Post-ReLU encoder activations; the last is the per-point feature
    /// matrix.
    pub enc_post: Vec<Mat>,
    /// Row attaining the channel max.
    pub argmax: Vec<u32>,
    /// Pooled feature, `1 × E`.
    pub pooled: Mat,
    /// Post-ReLU head activations (hidden layers only), each `1 × w`.
    pub head_post: Vec<Mat>,
    /// Sigmoid outputs: predicted lower/medium/higher ratios.
    pub pred: [f64; 3],
}

/// Runs the regression network on scaled features (`N × input_dim`, `N ≥ 1`).
pub fn forward_regression(net: &RegressionNet, features: &Mat) -> Result<RegCache, NetError> {
    net.validate_shapes()?;
    let n = features.rows();
    if n == 0 || features.cols() != net.arch.input_dim() {
        return Err(NetError::ShapeMismatch(format!(
            "features {}x{} vs input dim {}",
            n,
            features.cols(),
            net.arch.input_dim()
        )));
    }
    if !features.is_finite() {
        return Err(NetError::NonFinite("input features"));
    }

    let n_enc = net.arch.n_encoder_layers();
    let mut enc_post = Vec::with_capacity(n_enc);
    let mut h = features.clone();
    for l in 0..n_enc {
        let mut z = h.matmul(&net.weights[l]);
        z.add_row_bias(&net.biases[l]);
        relu_inplace(&mut z);
        enc_post.push(z.clone());
        h = z;
    }
    let local = enc_post.last().unwrap();
    let e = local.cols();

    let mut pooled = Mat::zeros(1, e);
    let mut argmax = vec![0u32; e];
    {
        let row = pooled.row_mut(0);
        row.fill(f64::NEG_INFINITY);
        for i in 0..n {
            for (f, &v) in local.row(i).iter().enumerate() {
                if v > row[f] {
                    row[f] = v;
                    argmax[f] = i as u32;
                }
            }
        }
    }

    let n_head = net.arch.head_dims().len() - 1;
    let mut head_post = Vec::with_capacity(n_head - 1);
    let mut h = pooled.clone();
    for l in 0..n_head {
        let mut z = h.matmul(&net.weights[n_enc + l]);
        z.add_row_bias(&net.biases[n_enc + l]);
        if l + 1 < n_head {
            relu_inplace(&mut z);
            head_post.push(z.clone());
        }
        h = z;
    }

    let mut pred = [0.0; 3];
    for (s, p) in pred.iter_mut().enumerate() {
        *p = 1.0 / (1.0 + (-h.get(0, s)).exp());
        if !p.is_finite() {
            return Err(NetError::NonFinite("regression output"));
        }
    }
    Ok(RegCache { input: features.clone(), enc_post, argmax, pooled, head_post, pred })
}

/// Backpropagates `d_pred` (derivative of the loss with respect to the three
/// predicted ratios) to parameter gradients.
pub fn backward_regression(
    net: &RegressionNet,
    cache: &RegCache,
    d_pred: &[f64; 3],
) -> Result<RegressionNet, NetError> {
    net.validate_shapes()?;
    let n = cache.input.rows();
    let n_enc = net.arch.n_encoder_layers();
    let n_head = net.arch.head_dims().len() - 1;
    let mut grads = net.zeros_like();

    // Through the sigmoids: dz = d_pred · σ · (1 − σ).
    let mut delta = Mat::zeros(1, 3);
    for (s, &d) in d_pred.iter().enumerate() {
        let p = cache.pred[s];
        delta.set(0, s, d * p * (1.0 - p));
    }

    // Head layers, last to first.
    for l in (0..n_head).rev() {
        let layer = n_enc + l;
        let input = if l == 0 { &cache.pooled } else { &cache.head_post[l - 1] };
        grads.weights[layer] = input.matmul_at(&delta);
        for (b, c) in grads.biases[layer].iter_mut().zip(0..delta.cols()) {
            *b = delta.get(0, c);
        }
        let mut d_in = delta.matmul_bt(&net.weights[layer]);
        if l > 0 {
            for (v, &post) in d_in.data_mut().iter_mut().zip(cache.head_post[l - 1].data()) {
                if post <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        delta = d_in;
    }

    // Un-pool: each channel's gradient flows only to the row that won the
    // max.
    let e = net.arch.feature_dim();
    let mut d_local = Mat::zeros(n, e);
    for f in 0..e {
        let row = cache.argmax[f] as usize;
        d_local.set(row, f, delta.get(0, f));
    }

    // Encoder layers, last to first.
    let mut delta = d_local;
    for l in (0..n_enc).rev() {
        for (v, &post) in delta.data_mut().iter_mut().zip(cache.enc_post[l].data()) {
            if post <= 0.0 {
                *v = 0.0;
            }
        }
        let input = if l == 0 { &cache.input } else { &cache.enc_post[l - 1] };
        grads.weights[l] = input.matmul_at(&delta);
        for c in 0..delta.cols() {
            grads.biases[l][c] = (0..delta.rows()).map(|r| delta.get(r, c)).sum();
        }
        if l > 0 {
            delta = delta.matmul_bt(&net.weights[l]);
        }
    }
    Ok(grads)
}

/// A trained direct-regression model.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectModel {
    pub net: RegressionNet,
    pub opt: AdamState<RegressionNet>,
    pub scaler: FeatureScaler,
    pub neighborhood_radius: f64,
}

/// Predicts the three ratios for one plot (every point); returns the
/// prediction and the number of clamped feature entries.
pub fn predict_direct(
    model: &DirectModel,
    plot: &Plot,
) -> Result<(StratumOccupancy, usize), TrainError> {
    let normalized;
    let plot = if plot.z_norm.is_some() {
        plot
    } else {
        normalized = crate::plotio::normalize_elevation(plot.clone(), model.neighborhood_radius);
        &normalized
    };
    let (features, clamped) = apply_scaler(&model.scaler, plot, &all_indices(plot))?;
    let cache = forward_regression(&model.net, &features)?;
    Ok((StratumOccupancy::from_array(cache.pred), clamped))
}

/// Hyper-parameters of a direct-regression run; mirrors the occupancy
/// trainer where the knobs coincide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub subsample: usize,
    pub split: f64,
    pub arch: RegArch,
    pub neighborhood_radius: f64,
}

impl Default for DirectTrainConfig {
    fn default() -> Self {
        DirectTrainConfig {
            batch_size: 20,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 7,
            subsample: crate::plotio::DEFAULT_SUBSAMPLE,
            split: 0.8,
            arch: RegArch::default(),
            neighborhood_radius: crate::plotio::DEFAULT_NEIGHBORHOOD_RADIUS,
        }
    }
}

impl DirectTrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::BadConfig(msg.into()));
        if self.batch_size == 0 || self.epochs == 0 || self.subsample == 0 {
            return bad("batch size, epochs, and subsample must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive and finite");
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split fraction must lie strictly between 0 and 1");
        }
        if !(self.neighborhood_radius > 0.0 && self.neighborhood_radius.is_finite()) {
            return bad("neighborhood radius must be positive and finite");
        }
        self.arch.validate()?;
        if self.arch.input_dim() != FEATURE_COUNT {
            return bad("network input width must match the feature count");
        }
        Ok(())
    }
}

/// Per-epoch record of a regression run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegEpochStats {
    /// Mean absolute error over the training split (average of the three
    /// strata).
    pub train_mae: f64,
    /// Mean absolute error per stratum over the validation split.
    pub val_mae: [f64; 3],
}

/// Full record of a regression run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub train_plots: usize,
    pub val_plots: usize,
    /// Identifiers of the held-out validation plots, in split order.
    pub val_plot_ids: Vec<String>,
    pub epochs: Vec<RegEpochStats>,
    pub final_val_mae: [f64; 3],
}

/// Trains the direct-regression model on labeled plots; deterministic under
/// the same seed streams as the occupancy trainer.
pub fn direct_regression_train(
    dataset: &[Plot],
    cfg: &DirectTrainConfig,
) -> Result<(DirectModel, RegressionReport), TrainError> {
    cfg.validate()?;
    let prep = prepare_dataset(dataset, cfg.split, cfg.seed, cfg.neighborhood_radius)?;

    let val_batches: Vec<(Mat, [f64; 3])> = prep
        .val
        .iter()
        .enumerate()
        .map(|(i, plot)| {
            let idx =
                subsample(plot, cfg.subsample, derive_seed(cfg.seed, STREAM_VALSAMPLE, i as u64));
            let (features, _) = apply_scaler(&prep.scaler, plot, &idx)?;
            Ok((features, plot.labels.unwrap()))
        })
        .collect::<Result<_, TrainError>>()?;

    let mut net = RegressionNet::init(&cfg.arch, cfg.seed)?;
    let mut opt = AdamState::new(&net, cfg.learning_rate);
    let n_train = prep.train.len();
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64)));

        let mut mae_sum = 0.0;
        for (batch_no, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = net.zeros_like();
            for &plot_idx in batch {
                let plot = &prep.train[plot_idx];
                let sub_seed =
                    derive_seed(cfg.seed, STREAM_SUBSAMPLE, (epoch * n_train + plot_idx) as u64);
                let idx = subsample(plot, cfg.subsample, sub_seed);
                let (features, _) = apply_scaler(&prep.scaler, plot, &idx)?;
                let cache = forward_regression(&net, &features)?;
                let labels = plot.labels.unwrap();

                let mut loss = 0.0;
                let mut d_pred = [0.0; 3];
                for s in 0..3 {
                    let diff = cache.pred[s] - labels[s];
                    loss += diff.abs() / 3.0;
                    d_pred[s] = diff.signum() / 3.0;
                }
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
                }
                mae_sum += loss;

                let plot_grads = backward_regression(&net, &cache, &d_pred)?;
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
            adam_step(&mut net, &grads, &mut opt)?;
        }

        let mut val_mae = [0.0; 3];
        for (features, labels) in &val_batches {
            let cache = forward_regression(&net, features)?;
            for s in 0..3 {
                val_mae[s] += (cache.pred[s] - labels[s]).abs();
            }
        }
        for m in &mut val_mae {
            *m /= val_batches.len().max(1) as f64;
        }
        epochs.push(RegEpochStats { train_mae: mae_sum / n_train as f64, val_mae });
    }

    let final_val_mae = epochs.last().map(|e| e.val_mae).unwrap_or([0.0; 3]);
    let report = RegressionReport {
        train_plots: prep.train.len(),
        val_plots: prep.val.len(),
        val_plot_ids: prep.val.iter().map(|p| p.plot_id.clone()).collect(),
        epochs,
        final_val_mae,
    };
    let model =
        DirectModel { net, opt, scaler: prep.scaler, neighborhood_radius: cfg.neighborhood_radius };
    Ok((model, report))
}
