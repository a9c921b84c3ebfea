//! Occupancy rasters: max-projection of per-point probabilities onto a pixel
//! grid, aggregation over the plot disk, and the matching backward pass.
//!
//! The plot footprint `[-R, R]²` is divided into `K × K` square pixels.  A
//! stratum's occupancy at pixel `j` is the **maximum** probability of that
//! stratum over the points falling in `j` — one well-classified return is
//! enough to mark a pixel occupied, which is what makes training from
//! plot-level ratios possible.  The plot-level ratio is the mean occupancy
//! over pixels whose center lies inside the disk.
//!
//! Because only the per-pixel argmax point receives gradient, the backward
//! pass is sparse: each pixel routes its upstream derivative to exactly one
//! point (ties break to the lowest point index).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat::Mat;

/// The three vegetation strata, ordered by height band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stratum {
    /// Below 0.5 m of normalized elevation (grasses, forbs).
    Lower,
    /// 0.5 m to 1.5 m (shrubs).
    Medium,
    /// Above 1.5 m (tree canopy).
    Higher,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Lower, Stratum::Medium, Stratum::Higher];

    /// Column of this stratum inside a 4-class probability matrix
    /// (column 0 is soil).
    pub fn class_column(self) -> usize {
        match self {
            Stratum::Lower => 1,
            Stratum::Medium => 2,
            Stratum::Higher => 3,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Stratum::Lower => "lower",
            Stratum::Medium => "medium",
            Stratum::Higher => "higher",
        }
    }
}

/// Plot-level occupancy ratios per stratum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumOccupancy {
    pub lower: f64,
    pub medium: f64,
    pub higher: f64,
}

impl StratumOccupancy {
    pub fn as_array(&self) -> [f64; 3] {
        [self.lower, self.medium, self.higher]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        StratumOccupancy { lower: a[0], medium: a[1], higher: a[2] }
    }
}

/// One stratum's occupancy raster.
///
/// `values` is row-major with `iy * k + ix`; `ix` grows with x (west → east)
/// and `iy` with y (south → north).  Pixels whose center falls outside the
/// plot disk are forced to zero occupancy and carry no argmax point.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyRaster {
    pub stratum: Stratum,
    pub k: usize,
    pub radius: f64,
    pub values: Vec<f64>,
    /// True where the pixel center lies inside the disk.
    pub mask: Vec<bool>,
    /// Index of the point attaining the per-pixel maximum, if any.
    pub argmax_point: Vec<Option<u32>>,
}

/// Assignment of every point to its pixel; shared by the three rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelPartition {
    pub k: usize,
    pub radius: f64,
    /// Point indices per pixel; a partition of all points, including those
    /// landing on out-of-disk corner pixels.
    pub pixel_points: Vec<Vec<u32>>,
}

/// Result of projecting one plot's probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub partition: PixelPartition,
    pub rasters: [OccupancyRaster; 3],
}

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("grid size must be at least 1")]
    BadGrid,
    #[error("plot radius must be positive")]
    NonPositiveRadius,
    #[error("point {index} at ({x}, {y}) falls outside the [-radius, radius] square")]
    OutsideGrid { index: usize, x: f64, y: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Maps a coordinate to its pixel, with half-open cells `[lo, hi)` and the
/// far edges closed so `x == radius` lands in the last column.
pub fn pixel_index(x: f64, y: f64, k: usize, radius: f64) -> Option<usize> {
    let cell = 2.0 * radius / k as f64;
    let axis = |v: f64| -> Option<usize> {
        if v < -radius || v > radius {
            return None;
        }
        let i = ((v + radius) / cell).floor() as usize;
        Some(i.min(k - 1))
    };
    let (ix, iy) = (axis(x)?, axis(y)?);
    Some(iy * k + ix)
}

/// True per pixel when its center lies strictly within the disk.
pub fn disk_mask(k: usize, radius: f64) -> Vec<bool> {
    let cell = 2.0 * radius / k as f64;
    let mut mask = vec![false; k * k];
    for iy in 0..k {
        let cy = -radius + (iy as f64 + 0.5) * cell;
        for ix in 0..k {
            let cx = -radius + (ix as f64 + 0.5) * cell;
            mask[iy * k + ix] = cx * cx + cy * cy <= radius * radius;
        }
    }
    mask
}

/// Projects per-point class probabilities onto the three stratum rasters.
///
/// `probs` is `N × 4` (soil, lower, medium, higher); `coords` are the
/// centered x/y of the same `N` points.
pub fn project(
    probs: &Mat,
    coords: &[(f64, f64)],
    k: usize,
    radius: f64,
) -> Result<Projection, RasterError> {
    if k == 0 {
        return Err(RasterError::BadGrid);
    }
    if radius.is_nan() || radius <= 0.0 {
        return Err(RasterError::NonPositiveRadius);
    }
    if probs.cols() != 4 || probs.rows() != coords.len() {
        return Err(RasterError::ShapeMismatch(format!(
            "probabilities {}x{} vs {} coordinates",
            probs.rows(),
            probs.cols(),
            coords.len()
        )));
    }
    if coords.is_empty() {
        return Err(RasterError::ShapeMismatch("no points to project".into()));
    }
    let k2 = k * k;
    let mut pixel_points: Vec<Vec<u32>> = vec![Vec::new(); k2];
    for (i, &(x, y)) in coords.iter().enumerate() {
        let j = pixel_index(x, y, k, radius).ok_or(RasterError::OutsideGrid { index: i, x, y })?;
        pixel_points[j].push(i as u32);
    }
    let mask = disk_mask(k, radius);
    let rasters = Stratum::ALL.map(|stratum| {
        let col = stratum.class_column();
        let mut values = vec![0.0; k2];
        let mut argmax_point = vec![None; k2];
        for j in 0..k2 {
            if !mask[j] {
                continue; // out-of-disk pixels stay at zero with no argmax
            }
            let mut best = f64::NEG_INFINITY;
            for &i in &pixel_points[j] {
                let p = probs.get(i as usize, col);
                // Strict comparison over ascending indices: ties keep the
                // lowest point index.
                if p > best {
                    best = p;
                    argmax_point[j] = Some(i);
                }
            }
            if argmax_point[j].is_some() {
                values[j] = best;
            }
        }
        OccupancyRaster { stratum, k, radius, values, mask: mask.clone(), argmax_point }
    });
    Ok(Projection { partition: PixelPartition { k, radius, pixel_points }, rasters })
}

/// Mean occupancy over in-disk pixels.
pub fn aggregate(raster: &OccupancyRaster) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &m) in raster.values.iter().zip(&raster.mask) {
        if m {
            sum += v;
            count += 1;
        }
    }
    sum / count as f64
}

/// Number of in-disk pixels.
pub fn mask_count(raster: &OccupancyRaster) -> usize {
    raster.mask.iter().filter(|&&m| m).count()
}

/// Gradient of [`aggregate`] with respect to each pixel: `1/M` on in-disk
/// pixels, zero elsewhere.
pub fn mean_gradient(raster: &OccupancyRaster) -> Vec<f64> {
    let m = mask_count(raster) as f64;
    raster.mask.iter().map(|&in_disk| if in_disk { 1.0 / m } else { 0.0 }).collect()
}

/// Plot-level occupancy from a projection.
pub fn aggregate_all(projection: &Projection) -> StratumOccupancy {
    let [l, m, h] = &projection.rasters;
    StratumOccupancy { lower: aggregate(l), medium: aggregate(m), higher: aggregate(h) }
}

/// Backward pass of [`project`]: routes per-pixel upstream derivatives to
/// the argmax point of each pixel.
///
/// `d_pixels[s][j]` is the derivative of the loss with respect to raster `s`
/// at pixel `j`.  Returns an `n_points × 4` gradient over the probability
/// matrix; the soil column receives nothing because no raster reads it.
pub fn raster_backward(
    projection: &Projection,
    d_pixels: &[Vec<f64>; 3],
    n_points: usize,
) -> Result<Mat, RasterError> {
    let k2 = projection.partition.k * projection.partition.k;
    let mut grad = Mat::zeros(n_points, 4);
    for (raster, d) in projection.rasters.iter().zip(d_pixels) {
        if d.len() != k2 {
            return Err(RasterError::ShapeMismatch(format!(
                "pixel gradient length {} vs {} pixels",
                d.len(),
                k2
            )));
        }
        let col = raster.stratum.class_column();
        for (j, &dj) in d.iter().enumerate() {
            if let Some(i) = raster.argmax_point[j] {
                let i = i as usize;
                if i >= n_points {
                    return Err(RasterError::ShapeMismatch(format!(
                        "argmax point {i} out of range {n_points}"
                    )));
                }
                grad.set(i, col, grad.get(i, col) + dj);
            }
        }
    }
    Ok(grad)
}

/// Renders one raster as a plain-text PGM (P2) image, 0–255 grayscale.
///
/// Rows are emitted north-up: the top image row is the highest `iy`.
pub fn to_pgm(raster: &OccupancyRaster) -> String {
    let k = raster.k;
    let mut out = format!("P2\n{k} {k}\n255\n");
    for iy in (0..k).rev() {
        let row: Vec<String> = (0..k)
            .map(|ix| format!("{}", (raster.values[iy * k + ix] * 255.0).round() as u8))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Brown earth tone used for unoccupied in-disk pixels in the composite.
const COMPOSITE_BASE: [f64; 3] = [120.0, 85.0, 50.0];
/// Dark gray for pixels outside the plot disk.
const COMPOSITE_OUTSIDE: [u8; 3] = [40, 40, 40];

/// Renders the three rasters as one plain-text PPM (P3) composite:
/// lower occupancy saturates green, medium blue, higher red, blended over a
/// brown base; out-of-disk pixels are dark gray.  Rows are north-up.
pub fn to_composite_ppm(rasters: &[OccupancyRaster; 3]) -> String {
    let k = rasters[0].k;
    let mut out = format!("P3\n{k} {k}\n255\n");
    for iy in (0..k).rev() {
        let mut row = Vec::with_capacity(k);
        for ix in 0..k {
            let j = iy * k + ix;
            let px = if rasters[0].mask[j] {
                let lerp = |base: f64, o: f64| (base + (255.0 - base) * o).round() as u8;
                [
                    lerp(COMPOSITE_BASE[0], rasters[2].values[j]), // higher -> red
                    lerp(COMPOSITE_BASE[1], rasters[0].values[j]), // lower -> green
                    lerp(COMPOSITE_BASE[2], rasters[1].values[j]), // medium -> blue
                ]
            } else {
                COMPOSITE_OUTSIDE
            };
            row.push(format!("{} {} {}", px[0], px[1], px[2]));
        }
        out.push_str(&row.join("  "));
        out.push('\n');
    }
    out
}

/// Dumps raw per-pixel occupancies as CSV for downstream analysis.
pub fn to_pixels_csv(rasters: &[OccupancyRaster; 3]) -> String {
    let k = rasters[0].k;
    let mut out = String::from("ix,iy,in_disk,o_lower,o_medium,o_higher\n");
    for iy in 0..k {
        for ix in 0..k {
            let j = iy * k + ix;
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                ix,
                iy,
                rasters[0].mask[j] as u8,
                rasters[0].values[j],
                rasters[1].values[j],
                rasters[2].values[j],
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    /// Independent double-loop reference: for every pixel, scan all points,
    /// test membership against explicit interval bounds, and take the max.
    fn oracle_rasters(
        probs: &Mat,
        coords: &[(f64, f64)],
        k: usize,
        radius: f64,
    ) -> ([Vec<f64>; 3], [f64; 3]) {
        let cell = 2.0 * radius / k as f64;
        let mut values = [vec![0.0; k * k], vec![0.0; k * k], vec![0.0; k * k]];
        let mut sums = [0.0; 3];
        let mut in_disk = 0usize;
        for iy in 0..k {
            for ix in 0..k {
                let (x_lo, y_lo) = (-radius + ix as f64 * cell, -radius + iy as f64 * cell);
                let inside = |v: f64, lo: f64, last: bool| {
                    v >= lo && (v < lo + cell || (last && v <= lo + cell))
                };
                let cx = x_lo + 0.5 * cell;
                let cy = y_lo + 0.5 * cell;
                let masked = cx * cx + cy * cy <= radius * radius;
                for s in 0..3 {
                    let mut best = 0.0f64;
                    let mut any = false;
                    for (i, &(x, y)) in coords.iter().enumerate() {
                        if inside(x, x_lo, ix == k - 1) && inside(y, y_lo, iy == k - 1) {
                            let p = probs.get(i, s + 1);
                            if !any || p > best {
                                best = p;
                                any = true;
                            }
                        }
                    }
                    let v = if masked && any { best } else { 0.0 };
                    values[s][iy * k + ix] = v;
                    if masked {
                        sums[s] += v;
                    }
                }
                if masked {
                    in_disk += 1;
                }
            }
        }
        let occ = [sums[0] / in_disk as f64, sums[1] / in_disk as f64, sums[2] / in_disk as f64];
        (values, occ)
    }

    fn random_instance(seed: u64, n: usize, radius: f64) -> (Mat, Vec<(f64, f64)>) {
        let mut rng = rng_from_seed(seed);
        let coords: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (r * a.cos(), r * a.sin())
            })
            .collect();
        let mut probs = Mat::zeros(n, 4);
        for i in 0..n {
            let mut row = [0.0; 4];
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = rng.random_range(0.0f64..1.0);
                sum += *v;
            }
            for (c, v) in row.iter().enumerate() {
                probs.set(i, c, v / sum);
            }
        }
        (probs, coords)
    }

    #[test]
    fn projection_matches_double_loop_oracle() {
        for seed in 0..50 {
            let k = 1 + (seed as usize % 8);
            let n = 1 + (seed as usize * 7) % 50;
            let (probs, coords) = random_instance(seed, n, 10.0);
            let proj = project(&probs, &coords, k, 10.0).unwrap();
            let (oracle_vals, oracle_occ) = oracle_rasters(&probs, &coords, k, 10.0);
            for (s, oracle) in oracle_vals.iter().enumerate() {
                for (j, &ov) in oracle.iter().enumerate() {
                    assert!(
                        (proj.rasters[s].values[j] - ov).abs() <= 1e-12,
                        "seed {seed} stratum {s} pixel {j}"
                    );
                }
            }
            let occ = aggregate_all(&proj).as_array();
            for s in 0..3 {
                assert!((occ[s] - oracle_occ[s]).abs() <= 1e-12, "seed {seed} stratum {s}");
            }
        }
    }

    #[test]
    fn pixel_points_partition_all_points() {
        let (probs, coords) = random_instance(9, 40, 10.0);
        let proj = project(&probs, &coords, 5, 10.0).unwrap();
        let mut seen = vec![0usize; coords.len()];
        for ids in &proj.partition.pixel_points {
            for &i in ids {
                seen[i as usize] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "each point in exactly one pixel");
    }

    #[test]
    fn edges_and_far_boundary_are_assigned() {
        let k = 4;
        let r = 10.0;
        assert_eq!(pixel_index(-10.0, -10.0, k, r), Some(0));
        assert_eq!(pixel_index(10.0, 10.0, k, r), Some(k * k - 1));
        // Interior cell boundary belongs to the upper cell (half-open).
        assert_eq!(pixel_index(-5.0, -10.0, k, r), Some(1));
        assert_eq!(pixel_index(10.1, 0.0, k, r), None);
    }

    #[test]
    fn masked_pixels_are_zero_with_no_argmax() {
        // A corner point lands on an out-of-disk pixel for K=8.
        let probs = Mat::from_vec(1, 4, vec![0.1, 0.6, 0.2, 0.1]);
        let coords = vec![(-9.9, -9.9)];
        let proj = project(&probs, &coords, 8, 10.0).unwrap();
        let j = pixel_index(-9.9, -9.9, 8, 10.0).unwrap();
        assert!(!proj.rasters[0].mask[j]);
        for r in &proj.rasters {
            assert_eq!(r.values[j], 0.0);
            assert_eq!(r.argmax_point[j], None);
        }
        // Point still tracked by the partition.
        assert_eq!(proj.partition.pixel_points[j], vec![0]);
    }

    #[test]
    fn disk_mask_fraction_approaches_pi_over_four() {
        let k = 64;
        let mask = disk_mask(k, 10.0);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (k * k) as f64;
        assert!((frac - std::f64::consts::PI / 4.0).abs() < 0.01, "{frac}");
    }

    #[test]
    fn aggregate_and_mean_gradient_are_consistent() {
        let (probs, coords) = random_instance(3, 30, 10.0);
        let proj = project(&probs, &coords, 6, 10.0).unwrap();
        let r = &proj.rasters[1];
        let grad = mean_gradient(r);
        // <grad, values> equals the aggregate because masked values are zero.
        let dot: f64 = grad.iter().zip(&r.values).map(|(g, v)| g * v).sum();
        assert!((dot - aggregate(r)).abs() < 1e-12);
        let m = mask_count(r) as f64;
        for (g, &in_disk) in grad.iter().zip(&r.mask) {
            assert_eq!(*g, if in_disk { 1.0 / m } else { 0.0 });
        }
    }

    #[test]
    fn backward_routes_gradient_to_argmax_only() {
        // Two points in one pixel with distinct lower-probabilities.
        let probs = Mat::from_vec(2, 4, vec![0.1, 0.6, 0.2, 0.1, 0.1, 0.3, 0.5, 0.1]);
        let coords = vec![(0.2, 0.2), (0.3, 0.3)];
        let k = 2;
        let proj = project(&probs, &coords, k, 10.0).unwrap();
        let j = pixel_index(0.2, 0.2, k, 10.0).unwrap();
        let mut d = [vec![0.0; k * k], vec![0.0; k * k], vec![0.0; k * k]];
        d[0][j] = 1.0; // lower raster
        d[1][j] = 2.0; // medium raster
        let grad = raster_backward(&proj, &d, 2).unwrap();
        // Lower max is point 0, medium max is point 1.
        assert_eq!(grad.get(0, 1), 1.0);
        assert_eq!(grad.get(1, 1), 0.0);
        assert_eq!(grad.get(1, 2), 2.0);
        assert_eq!(grad.get(0, 2), 0.0);
        // Soil column never receives gradient.
        for i in 0..2 {
            assert_eq!(grad.get(i, 0), 0.0);
        }
    }

    #[test]
    fn ties_resolve_to_the_lowest_point_index() {
        let probs = Mat::from_vec(2, 4, vec![0.1, 0.5, 0.3, 0.1, 0.1, 0.5, 0.3, 0.1]);
        let coords = vec![(1.0, 1.0), (1.1, 1.1)];
        let proj = project(&probs, &coords, 2, 10.0).unwrap();
        let j = pixel_index(1.0, 1.0, 2, 10.0).unwrap();
        assert_eq!(proj.rasters[0].argmax_point[j], Some(0));
    }

    #[test]
    fn single_point_pixel_passes_gradient_through() {
        let probs = Mat::from_vec(1, 4, vec![0.2, 0.3, 0.4, 0.1]);
        let coords = vec![(0.0, 0.0)];
        let proj = project(&probs, &coords, 1, 10.0).unwrap();
        let d = [vec![0.7], vec![0.0], vec![0.0]];
        let grad = raster_backward(&proj, &d, 1).unwrap();
        assert_eq!(grad.get(0, 1), 0.7);
    }

    #[test]
    fn pgm_and_ppm_have_valid_headers_and_sizes() {
        let (probs, coords) = random_instance(5, 25, 10.0);
        let proj = project(&probs, &coords, 4, 10.0).unwrap();
        let pgm = to_pgm(&proj.rasters[0]);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("4 4"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.count(), 4);
        let ppm = to_composite_ppm(&proj.rasters);
        assert!(ppm.starts_with("P3\n4 4\n255\n"));
        let csv = to_pixels_csv(&proj.rasters);
        assert_eq!(csv.lines().count(), 17); // header + 16 pixels
        assert!(csv.starts_with("ix,iy,in_disk,o_lower,o_medium,o_higher\n"));
    }

    #[test]
    fn project_validates_inputs() {
        let probs = Mat::zeros(1, 4);
        assert!(matches!(project(&probs, &[(0.0, 0.0)], 0, 10.0), Err(RasterError::BadGrid)));
        assert!(matches!(
            project(&probs, &[(0.0, 0.0)], 4, -1.0),
            Err(RasterError::NonPositiveRadius)
        ));
        assert!(matches!(
            project(&probs, &[(20.0, 0.0)], 4, 10.0),
            Err(RasterError::OutsideGrid { .. })
        ));
        assert!(matches!(project(&probs, &[], 4, 10.0), Err(RasterError::ShapeMismatch(_))));
    }
}
