//! Plot file I/O, elevation normalization, feature scaling, subsampling.
//!
//! A plot is a circular clipping of an airborne LiDAR acquisition: a set of
//! points with position, radiometry (RGB + near-infrared), intensity and
//! return number, optionally annotated with the three stratum occupancy
//! ratios used as weak supervision.
//!
//! # Plot file format
//!
//! UTF-8 text, whitespace-separated:
//!
//! ```text
//! <plot_id> <o_lower> <o_medium> <o_higher>
//! <x> <y> <z> <red> <green> <blue> <nir> <intensity> <return_number>
//! ...
//! ```
//!
//! Labels are `-` when absent.  The writer emits six fractional digits; a
//! parse → write → parse → write cycle is byte-stable after the first write.
//! On parse, clouds whose coordinates are clearly absolute (centroid farther
//! than the plot radius from the origin, e.g. survey coordinates) are
//! re-centered on their centroid, quantized to the writer's 1e-6 grid.
//! Clouds already in the plot frame pass through untouched, so boundary
//! points are never displaced by the sampling noise of the centroid.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;
use crate::rng::rng_from_seed;

/// Length of the per-point feature vector fed to the networks:
/// x, y, z, red, green, blue, nir, intensity, return number, normalized
/// elevation.
pub const FEATURE_COUNT: usize = 10;

/// Column of the normalized-elevation feature inside the feature vector.
pub const Z_NORM_FEATURE: usize = 9;

/// Plot radius in meters when none is given explicitly.
pub const DEFAULT_PLOT_RADIUS: f64 = 10.0;

/// Radius of the cylindrical neighborhood used for elevation normalization.
pub const DEFAULT_NEIGHBORHOOD_RADIUS: f64 = 0.5;

/// Default number of points drawn per plot during training.
pub const DEFAULT_SUBSAMPLE: usize = 4096;

/// One LiDAR return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub red: f64,
    pub green: f64,
    pub blue: f64,
    pub nir: f64,
    pub intensity: f64,
    pub return_number: u32,
}

/// A circular plot: points in the plot frame (origin at the plot center),
/// plus optional labels and cached normalized elevations.
#[derive(Clone, Debug, PartialEq)]
pub struct Plot {
    pub plot_id: String,
    /// Plot radius in meters; not stored in the file format.
    pub radius: f64,
    pub points: Vec<RawPoint>,
    /// Per-point normalized elevation, filled by [`normalize_elevation`].
    pub z_norm: Option<Vec<f64>>,
    /// Occupancy ratios `[lower, medium, higher]`, each in `[0, 1]`.
    pub labels: Option<[f64; 3]>,
}

/// Per-feature min/max ranges fitted on a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mins: [f64; FEATURE_COUNT],
    pub maxs: [f64; FEATURE_COUNT],
}

#[derive(Debug, Error)]
pub enum PlotIoError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("plot has no points")]
    Empty,
    #[error("plot '{0}' has no normalized elevations; run elevation normalization first")]
    NotNormalized(String),
    #[error("cannot fit a scaler on an empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn parse_err(line: usize, msg: impl Into<String>) -> PlotIoError {
    PlotIoError::Parse { line, msg: msg.into() }
}

/// Field names for the nine columns of a point line, in order.
const POINT_FIELDS: [&str; 9] =
    ["x", "y", "z", "red", "green", "blue", "nir", "intensity", "return_number"];

fn parse_field(tok: &str, line: usize, name: &str) -> Result<f64, PlotIoError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("field '{name}' is not numeric: '{tok}'")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("field '{name}' is not finite: '{tok}'")));
    }
    Ok(v)
}

fn parse_label(tok: &str, line: usize) -> Result<f64, PlotIoError> {
    let v = parse_field(tok, line, "label")?;
    if !(0.0..=1.0).contains(&v) {
        return Err(parse_err(line, "label out of [0,1]"));
    }
    Ok(v)
}

/// Snaps `v` to the 1e-6 grid used by the writer; values already within one
/// grid step of zero collapse to exactly zero so re-centering stays stable.
fn quantize_offset(v: f64) -> f64 {
    if v.abs() < 1e-6 {
        0.0
    } else {
        (v * 1e6).round() / 1e6
    }
}

/// Re-centers x/y on the quantized centroid when the cloud is clearly not in
/// the plot frame yet; returns the applied offset (zero when untouched).
///
/// A cloud of in-frame points always has its centroid strictly inside the
/// plot disk, so a centroid farther than `radius` from the origin means the
/// coordinates are absolute (e.g. survey easting/northing) and safe to
/// shift.  Anything else is left alone to preserve the producer's frame —
/// shifting a genuinely centered cloud by its sample centroid would push
/// boundary points outside the radius.  Shared by the parser and by callers
/// that build plots from in-memory buffers so both agree on the rule.
pub fn center_points(points: &mut [RawPoint], radius: f64) -> (f64, f64) {
    if points.is_empty() {
        return (0.0, 0.0);
    }
    let n = points.len() as f64;
    let cx = quantize_offset(points.iter().map(|p| p.x).sum::<f64>() / n);
    let cy = quantize_offset(points.iter().map(|p| p.y).sum::<f64>() / n);
    if cx.hypot(cy) <= radius {
        return (0.0, 0.0);
    }
    for p in points.iter_mut() {
        p.x -= cx;
        p.y -= cy;
    }
    (cx, cy)
}

/// Parses a plot with the default 10 m radius.
pub fn parse_plot(text: &str) -> Result<Plot, PlotIoError> {
    parse_plot_with_radius(text, DEFAULT_PLOT_RADIUS)
}

/// Parses a plot, re-centering clearly-absolute coordinates and validating
/// every point against `radius`.
pub fn parse_plot_with_radius(text: &str, radius: f64) -> Result<Plot, PlotIoError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header line"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 {
        return Err(parse_err(1, format!("header needs 4 fields, got {}", toks.len())));
    }
    let plot_id = toks[0].to_string();
    let labels = if toks[1..].iter().all(|t| *t == "-") {
        None
    } else if toks[1..].contains(&"-") {
        return Err(parse_err(1, "labels must be all present or all '-'"));
    } else {
        Some([parse_label(toks[1], 1)?, parse_label(toks[2], 1)?, parse_label(toks[3], 1)?])
    };

    let mut points = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 9 {
            return Err(parse_err(lineno, format!("point needs 9 fields, got {}", toks.len())));
        }
        let mut vals = [0.0f64; 9];
        for (i, (tok, name)) in toks.iter().zip(POINT_FIELDS).enumerate() {
            vals[i] = parse_field(tok, lineno, name)?;
        }
        let rn = vals[8];
        if rn.fract() != 0.0 || rn < 1.0 || rn > u32::MAX as f64 {
            return Err(parse_err(
                lineno,
                format!("return_number must be an integer >= 1, got '{}'", toks[8]),
            ));
        }
        points.push(RawPoint {
            x: vals[0],
            y: vals[1],
            z: vals[2],
            red: vals[3],
            green: vals[4],
            blue: vals[5],
            nir: vals[6],
            intensity: vals[7],
            return_number: rn as u32,
        });
    }
    if points.is_empty() {
        return Err(PlotIoError::Empty);
    }
    center_points(&mut points, radius);
    for (i, p) in points.iter().enumerate() {
        if p.x.hypot(p.y) > radius + 1e-9 {
            return Err(parse_err(i + 2, format!("point outside plot radius {radius}")));
        }
    }
    Ok(Plot { plot_id, radius, points, z_norm: None, labels })
}

/// Serializes a plot in the canonical on-disk form (six fractional digits).
pub fn write_plot(plot: &Plot) -> String {
    let mut out = String::new();
    match plot.labels {
        Some([l, m, h]) => {
            out.push_str(&format!("{} {:.6} {:.6} {:.6}\n", plot.plot_id, l, m, h));
        }
        None => out.push_str(&format!("{} - - -\n", plot.plot_id)),
    }
    for p in &plot.points {
        out.push_str(&format!(
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            p.x, p.y, p.z, p.red, p.green, p.blue, p.nir, p.intensity, p.return_number as f64
        ));
    }
    out
}

/// Reads and parses a plot file.
pub fn read_plot_file(path: &Path, radius: f64) -> Result<Plot, PlotIoError> {
    let text = std::fs::read_to_string(path)?;
    parse_plot_with_radius(&text, radius)
}

/// Writes a plot in canonical form.
pub fn write_plot_file(path: &Path, plot: &Plot) -> Result<(), PlotIoError> {
    std::fs::write(path, write_plot(plot))?;
    Ok(())
}

/// Uniform grid hash over x/y with cell size equal to the query radius, so a
/// radius query only inspects the 3×3 neighborhood of a point's cell.
struct GridHash {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<u32>>,
}

impl GridHash {
    fn build(points: &[RawPoint], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p.x, p.y, cell)).or_default().push(i as u32);
        }
        GridHash { cell, cells }
    }

    fn key(x: f64, y: f64, cell: f64) -> (i64, i64) {
        ((x / cell).floor() as i64, (y / cell).floor() as i64)
    }

    /// Calls `f` for every point index within `radius` of `(x, y)`.
    fn for_each_within(
        &self,
        points: &[RawPoint],
        x: f64,
        y: f64,
        radius: f64,
        mut f: impl FnMut(u32),
    ) {
        let (kx, ky) = Self::key(x, y, self.cell);
        let r2 = radius * radius;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &i in ids {
                        let p = &points[i as usize];
                        let (ex, ey) = (p.x - x, p.y - y);
                        if ex * ex + ey * ey <= r2 {
                            f(i);
                        }
                    }
                }
            }
        }
    }
}

/// Fills `z_norm`: each point's elevation minus the minimum elevation within
/// the cylindrical neighborhood of `neighborhood_radius` around its x/y.
///
/// The neighborhood always contains the point itself, so `z_norm >= 0`.
pub fn normalize_elevation(mut plot: Plot, neighborhood_radius: f64) -> Plot {
    plot.z_norm = Some(normalized_elevations(&plot.points, neighborhood_radius));
    plot
}

/// Computes normalized elevations for a raw point buffer.
pub fn normalized_elevations(points: &[RawPoint], neighborhood_radius: f64) -> Vec<f64> {
    assert!(neighborhood_radius > 0.0, "neighborhood radius must be positive");
    let grid = GridHash::build(points, neighborhood_radius);
    points
        .iter()
        .map(|p| {
            let mut min_z = f64::INFINITY;
            grid.for_each_within(points, p.x, p.y, neighborhood_radius, |i| {
                min_z = min_z.min(points[i as usize].z);
            });
            p.z - min_z
        })
        .collect()
}

/// The raw 10-component feature vector of one point.
pub fn feature_vector(p: &RawPoint, z_norm: f64) -> [f64; FEATURE_COUNT] {
    [p.x, p.y, p.z, p.red, p.green, p.blue, p.nir, p.intensity, p.return_number as f64, z_norm]
}

/// Fits per-feature min/max over every point of every plot.
///
/// All plots must be normalized first.  Constant features keep `min == max`
/// and scale to zero in [`apply_scaler`].
pub fn fit_scaler(plots: &[Plot]) -> Result<FeatureScaler, PlotIoError> {
    let mut mins = [f64::INFINITY; FEATURE_COUNT];
    let mut maxs = [f64::NEG_INFINITY; FEATURE_COUNT];
    let mut any = false;
    for plot in plots {
        let z =
            plot.z_norm.as_ref().ok_or_else(|| PlotIoError::NotNormalized(plot.plot_id.clone()))?;
        for (p, &zn) in plot.points.iter().zip(z) {
            any = true;
            for (f, v) in feature_vector(p, zn).into_iter().enumerate() {
                mins[f] = mins[f].min(v);
                maxs[f] = maxs[f].max(v);
            }
        }
    }
    if !any {
        return Err(PlotIoError::EmptyDataset);
    }
    Ok(FeatureScaler { mins, maxs })
}

impl FeatureScaler {
    /// Scales one raw feature value into `[0, 1]`, clamping outside the
    /// fitted range; constant features map to zero.
    pub fn scale(&self, feature: usize, v: f64) -> f64 {
        let (lo, hi) = (self.mins[feature], self.maxs[feature]);
        if hi > lo {
            ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    /// True when `v` falls outside the fitted range of `feature`.
    fn clamps(&self, feature: usize, v: f64) -> bool {
        let (lo, hi) = (self.mins[feature], self.maxs[feature]);
        hi > lo && !(lo..=hi).contains(&v)
    }
}

/// Scales selected points of a plot into an `n × 10` feature matrix.
///
/// Returns the matrix and the number of entries clamped because they fell
/// outside the scaler's fitted range (a drift indicator at inference time).
pub fn apply_scaler(
    scaler: &FeatureScaler,
    plot: &Plot,
    indices: &[u32],
) -> Result<(Mat, usize), PlotIoError> {
    let z = plot.z_norm.as_ref().ok_or_else(|| PlotIoError::NotNormalized(plot.plot_id.clone()))?;
    let mut out = Mat::zeros(indices.len(), FEATURE_COUNT);
    let mut clamped = 0;
    for (row, &i) in indices.iter().enumerate() {
        let p = &plot.points[i as usize];
        let raw = feature_vector(p, z[i as usize]);
        let dst = out.row_mut(row);
        for (f, v) in raw.into_iter().enumerate() {
            if scaler.clamps(f, v) {
                clamped += 1;
            }
            dst[f] = scaler.scale(f, v);
        }
    }
    Ok((out, clamped))
}

/// Index list `0..n` for feeding a whole plot through [`apply_scaler`].
pub fn all_indices(plot: &Plot) -> Vec<u32> {
    (0..plot.points.len() as u32).collect()
}

/// Draws `n` point indices from a plot: a uniform sample without replacement
/// when the plot has at least `n` points, otherwise every index once plus
/// uniform draws with replacement up to `n`.
pub fn subsample(plot: &Plot, n: usize, seed: u64) -> Vec<u32> {
    sample_indices(plot.points.len(), n, seed)
}

pub(crate) fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<u32> {
    assert!(n >= 1, "subsample size must be at least 1");
    assert!(len >= 1, "cannot sample from an empty plot");
    use rand::Rng;
    let mut rng = rng_from_seed(seed);
    if len >= n {
        rand::seq::index::sample(&mut rng, len, n).iter().map(|i| i as u32).collect()
    } else {
        let mut out: Vec<u32> = (0..len as u32).collect();
        out.extend((len..n).map(|_| rng.random_range(0..len) as u32));
        out
    }
}
