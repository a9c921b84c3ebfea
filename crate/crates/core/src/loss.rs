//! Composite training loss.
//!
//! Three terms, combined as `l = l_data + α·l_entropy + λ·l_likelihood`:
//!
//! * **data**: mean absolute error between predicted and observed plot-level
//!   occupancy ratios — the only supervised signal;
//! * **entropy**: mean binary entropy of the per-pixel occupancies, pushing
//!   rasters toward confident 0/1 decisions;
//! * **likelihood**: the Gamma-mixture elevation term from
//!   [`crate::gamma::elevation_nll`].
//!
//! The entropy term clamps occupancies to `[δ, 1−δ]` before taking logs;
//! clamped pixels get zero gradient.

use serde::{Deserialize, Serialize};

use crate::raster::{mask_count, OccupancyRaster, StratumOccupancy};

/// Clamp bound δ for the entropy term.
pub const ENTROPY_CLAMP: f64 = 1e-7;

/// Weights of the unsupervised loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// α, weight of the entropy term.
    pub entropy_weight: f64,
    /// λ, weight of the elevation likelihood term.
    pub likelihood_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { entropy_weight: 0.2, likelihood_weight: 1.0 }
    }
}

/// Binary entropy `−[o·ln o + (1−o)·ln(1−o)]` with the clamp applied;
/// natural log, so the maximum is `ln 2` at `o = 0.5`.
pub fn binary_entropy(o: f64) -> f64 {
    let o = o.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    -(o * o.ln() + (1.0 - o) * (1.0 - o).ln())
}

/// Mean absolute error over the three strata and its subgradient with
/// respect to the predicted ratios (`sign/3`, zero exactly at equality).
pub fn data_loss(pred: &StratumOccupancy, truth: &[f64; 3]) -> (f64, [f64; 3]) {
    let p = pred.as_array();
    let mut loss = 0.0;
    let mut grad = [0.0; 3];
    for s in 0..3 {
        let d = p[s] - truth[s];
        loss += d.abs() / 3.0;
        grad[s] = if d == 0.0 { 0.0 } else { d.signum() / 3.0 };
    }
    (loss, grad)
}

/// Mean binary entropy over the in-disk pixels of all three rasters, and its
/// gradient with respect to each pixel occupancy.
///
/// The gradient of `H` is `ln((1−o)/o)`; pixels whose occupancy fell outside
/// the clamp range, and pixels outside the disk, get zero.
pub fn entropy_loss(rasters: &[OccupancyRaster; 3]) -> (f64, [Vec<f64>; 3]) {
    let m = mask_count(&rasters[0]);
    let total = (3 * m) as f64;
    let mut loss = 0.0;
    let grads = [0, 1, 2].map(|s| {
        let r = &rasters[s];
        r.values
            .iter()
            .zip(&r.mask)
            .map(|(&o, &in_disk)| {
                if !in_disk {
                    return 0.0;
                }
                loss += binary_entropy(o) / total;
                if (ENTROPY_CLAMP..=1.0 - ENTROPY_CLAMP).contains(&o) {
                    ((1.0 - o) / o).ln() / total
                } else {
                    0.0
                }
            })
            .collect()
    });
    (loss, grads)
}

/// Combines the three scalar terms with the configured weights.
pub fn total_loss(data: f64, entropy: f64, likelihood: f64, cfg: &LossConfig) -> f64 {
    data + cfg.entropy_weight * entropy + cfg.likelihood_weight * likelihood
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Stratum;
    use approx::assert_relative_eq;

    #[test]
    fn binary_entropy_extremes() {
        assert_relative_eq!(binary_entropy(0.5), std::f64::consts::LN_2, epsilon = 1e-15);
        // Clamped endpoints stay tiny but non-negative.
        assert!(binary_entropy(0.0) >= 0.0);
        assert!(binary_entropy(0.0) < 2e-6);
        assert!(binary_entropy(1.0) < 2e-6);
        for o in [0.0, 0.1, 0.3, 0.5, 0.8, 1.0] {
            let h = binary_entropy(o);
            assert!((0.0..=std::f64::consts::LN_2 + 1e-15).contains(&h));
        }
    }

    #[test]
    fn data_loss_zero_iff_equal() {
        let truth = [0.3, 0.5, 0.1];
        let (l, g) = data_loss(&StratumOccupancy::from_array(truth), &truth);
        assert_eq!(l, 0.0);
        assert_eq!(g, [0.0; 3]);
        let (l, g) = data_loss(&StratumOccupancy::from_array([0.4, 0.5, 0.0]), &truth);
        assert_relative_eq!(l, (0.1 + 0.0 + 0.1) / 3.0, epsilon = 1e-15);
        assert_eq!(g[0], 1.0 / 3.0);
        assert_eq!(g[1], 0.0);
        assert_eq!(g[2], -1.0 / 3.0);
        assert!(l > 0.0);
    }

    fn toy_rasters(values: [Vec<f64>; 3], mask: Vec<bool>) -> [OccupancyRaster; 3] {
        let k = (mask.len() as f64).sqrt() as usize;
        [0, 1, 2].map(|s| OccupancyRaster {
            stratum: Stratum::ALL[s],
            k,
            radius: 10.0,
            values: values[s].clone(),
            mask: mask.clone(),
            argmax_point: vec![None; mask.len()],
        })
    }

    #[test]
    fn entropy_loss_means_over_in_disk_pixels_of_all_strata() {
        let mask = vec![true, true, true, false];
        let rasters = toy_rasters(
            [vec![0.5, 0.2, 0.9, 0.5], vec![0.5, 0.5, 0.5, 0.5], vec![0.1, 0.0, 1.0, 0.3]],
            mask,
        );
        let (loss, grads) = entropy_loss(&rasters);
        let mut expect = 0.0;
        for r in &rasters {
            for j in 0..3 {
                expect += binary_entropy(r.values[j]) / 9.0;
            }
        }
        assert_relative_eq!(loss, expect, epsilon = 1e-14);
        // Out-of-disk pixel contributes nothing and gets zero gradient.
        for g in &grads {
            assert_eq!(g[3], 0.0);
        }
        // At o = 0.5 the entropy is maximal: zero gradient.
        assert_eq!(grads[0][0], 0.0);
        // Clamped pixels (0 and 1) get zero gradient.
        assert_eq!(grads[2][1], 0.0);
        assert_eq!(grads[2][2], 0.0);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let mask = vec![true; 4];
        let base =
            [vec![0.3, 0.6, 0.45, 0.8], vec![0.2, 0.5, 0.7, 0.9], vec![0.15, 0.25, 0.35, 0.55]];
        let rasters = toy_rasters(base.clone(), mask.clone());
        let (_, grads) = entropy_loss(&rasters);
        let h = 1e-7;
        for s in 0..3 {
            for j in 0..4 {
                let mut up = base.clone();
                up[s][j] += h;
                let mut dn = base.clone();
                dn[s][j] -= h;
                let (lu, _) = entropy_loss(&toy_rasters(up, mask.clone()));
                let (ld, _) = entropy_loss(&toy_rasters(dn, mask.clone()));
                let fd = (lu - ld) / (2.0 * h);
                assert_relative_eq!(grads[s][j], fd, max_relative = 1e-5, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn total_loss_weighs_terms() {
        let cfg = LossConfig::default();
        assert_relative_eq!(total_loss(1.0, 2.0, 3.0, &cfg), 1.0 + 0.2 * 2.0 + 3.0);
        let custom = LossConfig { entropy_weight: 0.0, likelihood_weight: 0.5 };
        assert_relative_eq!(total_loss(1.0, 9.0, 2.0, &custom), 2.0);
    }
}
