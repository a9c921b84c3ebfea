//! Two-component Gamma mixture over normalized elevations.
//!
//! The mixture is an unsupervised prior on the vertical structure of a plot:
//! component 1 captures low returns (soil and lower vegetation), component 2
//! high returns (medium and higher vegetation).  It is fitted once per
//! training run with expectation/conditional-maximization (ECM) and then
//! frozen; during network training its per-component log-densities weight a
//! negative log-likelihood that nudges class probabilities toward the
//! component matching each point's elevation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};
use thiserror::Error;

use crate::mat::Mat;

/// Lower clip applied to elevations before evaluating Gamma densities, which
/// are undefined at zero.
pub const ELEVATION_EPS: f64 = 1e-6;

/// Bounds for the shape parameter; the profile solver never leaves them.
const SHAPE_MIN: f64 = 1e-3;
const SHAPE_MAX: f64 = 1e3;

/// Two-component Gamma mixture in shape/scale parametrization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaMixture {
    /// Weight of component 1, strictly inside `(0, 1)`.
    pub weight: f64,
    pub k1: f64,
    pub theta1: f64,
    pub k2: f64,
    pub theta2: f64,
}

/// Outcome of an ECM fit: final parameters plus the per-iteration
/// log-likelihood trace (non-decreasing up to floating-point slack).
#[derive(Clone, Debug)]
pub struct EcmFit {
    pub mixture: GammaMixture,
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum GammaError {
    #[error("{what} must be positive")]
    NonPositive { what: &'static str },
    #[error("mixture weight must lie strictly inside (0, 1)")]
    BadWeight,
    #[error("need at least {need} samples to fit a mixture, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("elevation samples have zero variance")]
    ZeroVariance,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("mixture file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GammaMixture {
    pub fn validate(&self) -> Result<(), GammaError> {
        if !(self.weight > 0.0 && self.weight < 1.0) {
            return Err(GammaError::BadWeight);
        }
        for (v, what) in [
            (self.k1, "shape k1"),
            (self.theta1, "scale theta1"),
            (self.k2, "shape k2"),
            (self.theta2, "scale theta2"),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GammaError::NonPositive { what });
            }
        }
        Ok(())
    }

    /// Method-of-moments starting point: samples are split at `split`, each
    /// side fitted by matching mean and variance.  Degenerate sides fall back
    /// to a broad component around the side's mean.
    pub fn moment_init(samples: &[f64], split: f64) -> GammaMixture {
        let (mut lo, mut hi): (Vec<f64>, Vec<f64>) = (Vec::new(), Vec::new());
        for &z in samples {
            let z = z.max(ELEVATION_EPS);
            if z < split {
                lo.push(z);
            } else {
                hi.push(z);
            }
        }
        let n = samples.len().max(1) as f64;
        let weight = (lo.len() as f64 / n).clamp(1e-3, 1.0 - 1e-3);
        let (k1, theta1) = moments_to_gamma(&lo, split * 0.5);
        let (k2, theta2) = moments_to_gamma(&hi, split * 2.0);
        GammaMixture { weight, k1, theta1, k2, theta2 }
    }
}

/// Matches a Gamma to sample mean/variance; `fallback_mean` seeds degenerate
/// sides (too few samples or zero spread).
fn moments_to_gamma(samples: &[f64], fallback_mean: f64) -> (f64, f64) {
    let broad = |mean: f64| -> (f64, f64) {
        let mean = mean.max(ELEVATION_EPS);
        (2.0, mean / 2.0)
    };
    if samples.len() < 2 {
        return broad(fallback_mean);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
    if var.is_nan() || var <= 0.0 {
        return broad(mean);
    }
    let k = (mean * mean / var).clamp(SHAPE_MIN, SHAPE_MAX);
    (k, (mean / k).max(1e-9))
}

/// Log-density of a Gamma(shape `k`, scale `theta`) at `z`.
pub fn gamma_logpdf(z: f64, k: f64, theta: f64) -> Result<f64, GammaError> {
    if z.is_nan() || z <= 0.0 {
        return Err(GammaError::NonPositive { what: "elevation z" });
    }
    if k.is_nan() || k <= 0.0 {
        return Err(GammaError::NonPositive { what: "shape k" });
    }
    if theta.is_nan() || theta <= 0.0 {
        return Err(GammaError::NonPositive { what: "scale theta" });
    }
    Ok((k - 1.0) * z.ln() - z / theta - ln_gamma(k) - k * theta.ln())
}

/// Trigamma function ψ′(x) for x > 0.
///
/// Small arguments are shifted up with the recurrence
/// ψ′(x) = ψ′(x+1) + 1/x²; large arguments use the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma defined for positive arguments only");
    let mut x = x;
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    // ψ′(x) ≈ 1/x + 1/(2x²) + Σ B₂ₙ / x^(2n+1)
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv
        + 0.5 * inv2
        + inv2 * inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)));
    acc + series
}

/// Solves `ln k − ψ(k) = s` for the shape `k`, clamped to `[1e-3, 1e3]`.
///
/// The left side is strictly decreasing from +∞ to 0 on (0, ∞), so the root
/// is unique for `s > 0`.  Newton steps are safeguarded by a shrinking
/// bracket; steps leaving it fall back to bisection.
fn solve_shape(s: f64) -> f64 {
    let g = |k: f64| k.ln() - digamma(k) - s;
    let (mut lo, mut hi) = (SHAPE_MIN, SHAPE_MAX);
    if g(lo) <= 0.0 {
        return SHAPE_MIN; // s so large the root is below the clamp
    }
    if g(hi) >= 0.0 {
        return SHAPE_MAX; // s so small the root is above the clamp
    }
    // Minka's closed-form initialization lands within a few percent.
    let mut k = ((3.0 - s + ((s - 3.0) * (s - 3.0) + 24.0 * s).sqrt()) / (12.0 * s)).clamp(lo, hi);
    for _ in 0..100 {
        let gk = g(k);
        if gk.abs() < 1e-13 {
            break;
        }
        if gk > 0.0 {
            lo = k; // g decreasing: positive value means the root is above k
        } else {
            hi = k;
        }
        let slope = 1.0 / k - trigamma(k);
        let next = k - gk / slope;
        k = if next.is_finite() && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    k
}

/// Posterior probability that each sample belongs to component 1.
pub fn responsibilities(mix: &GammaMixture, zs: &[f64]) -> Result<Vec<f64>, GammaError> {
    mix.validate()?;
    zs.iter()
        .map(|&z| {
            let z = z.max(ELEVATION_EPS);
            let a1 = mix.weight.ln() + gamma_logpdf(z, mix.k1, mix.theta1)?;
            let a2 = (1.0 - mix.weight).ln() + gamma_logpdf(z, mix.k2, mix.theta2)?;
            let m = a1.max(a2);
            let (e1, e2) = ((a1 - m).exp(), (a2 - m).exp());
            Ok(e1 / (e1 + e2))
        })
        .collect()
}

/// Total mixture log-likelihood of the samples.
pub fn log_likelihood(mix: &GammaMixture, zs: &[f64]) -> Result<f64, GammaError> {
    mix.validate()?;
    let mut total = 0.0;
    for &z in zs {
        let z = z.max(ELEVATION_EPS);
        let a1 = mix.weight.ln() + gamma_logpdf(z, mix.k1, mix.theta1)?;
        let a2 = (1.0 - mix.weight).ln() + gamma_logpdf(z, mix.k2, mix.theta2)?;
        let m = a1.max(a2);
        total += m + ((a1 - m).exp() + (a2 - m).exp()).ln();
    }
    if !total.is_finite() {
        return Err(GammaError::NonFinite("log-likelihood"));
    }
    Ok(total)
}

/// Fits the mixture by ECM.
///
/// E-step: posterior responsibilities under the current parameters.
/// CM-steps: closed-form weight update, then per component the profile
/// update — shape from `ln k − ψ(k) = ln(Σrz/Σr) − (Σr ln z)/Σr` and scale
/// `θ = Σrz / (k Σr)` at the new shape.  Updating the pair jointly from the
/// same responsibilities maximizes the expected complete log-likelihood, so
/// the data log-likelihood never decreases (up to float slack).
///
/// Stops when the log-likelihood improves by less than `tol` or after
/// `max_iter` iterations.
pub fn ecm_fit(
    samples: &[f64],
    init: GammaMixture,
    tol: f64,
    max_iter: usize,
) -> Result<EcmFit, GammaError> {
    const MIN_SAMPLES: usize = 10;
    if samples.len() < MIN_SAMPLES {
        return Err(GammaError::TooFewSamples { need: MIN_SAMPLES, got: samples.len() });
    }
    if samples.iter().any(|z| !z.is_finite()) {
        return Err(GammaError::NonFinite("elevation samples"));
    }
    init.validate()?;
    let zs: Vec<f64> = samples.iter().map(|&z| z.max(ELEVATION_EPS)).collect();
    let (lo, hi) =
        zs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &z| (lo.min(z), hi.max(z)));
    if hi <= lo {
        return Err(GammaError::ZeroVariance);
    }
    let ln_zs: Vec<f64> = zs.iter().map(|z| z.ln()).collect();
    let n = zs.len() as f64;

    let mut mix = init;
    let mut trace = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        let r1 = responsibilities(&mix, &zs)?;
        mix.weight = (r1.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
        let comp = |resp: &dyn Fn(f64) -> f64, k_old: f64, th_old: f64| -> (f64, f64) {
            let (mut sr, mut srz, mut srlz) = (0.0, 0.0, 0.0);
            for ((&z, &lz), &r) in zs.iter().zip(&ln_zs).zip(&r1) {
                let r = resp(r);
                sr += r;
                srz += r * z;
                srlz += r * lz;
            }
            if sr < 1e-10 {
                return (k_old, th_old); // starved component: keep parameters
            }
            let s = ((srz / sr).ln() - srlz / sr).max(1e-12);
            let k = solve_shape(s);
            (k, (srz / (k * sr)).max(1e-12))
        };
        (mix.k1, mix.theta1) = comp(&|r| r, mix.k1, mix.theta1);
        (mix.k2, mix.theta2) = comp(&|r| 1.0 - r, mix.k2, mix.theta2);
        let ll = log_likelihood(&mix, &zs)?;
        trace.push(ll);
        if (ll - prev).abs() < tol {
            break;
        }
        prev = ll;
    }
    Ok(EcmFit { mixture: mix, log_likelihood: trace, iterations })
}

/// Elevation negative log-likelihood of per-point class probabilities.
///
/// Soil and lower probabilities are scored by component 1, medium and higher
/// by component 2 (component densities, not weighted by the mixture weight):
///
/// `l = −(1/N) Σᵢ [ (p_soil + p_lower)·ln f₁(zᵢ) + (p_medium + p_higher)·ln f₂(zᵢ) ]`
///
/// Returns the loss and its gradient with respect to each probability, which
/// is constant in the probabilities themselves.
pub fn elevation_nll(
    mix: &GammaMixture,
    probs: &Mat,
    zs: &[f64],
) -> Result<(f64, Mat), GammaError> {
    mix.validate()?;
    if probs.rows() != zs.len() || probs.cols() != 4 {
        return Err(GammaError::Parse(format!(
            "probability matrix {}x{} does not match {} elevations",
            probs.rows(),
            probs.cols(),
            zs.len()
        )));
    }
    let n = zs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(probs.rows(), 4);
    for (i, &z) in zs.iter().enumerate() {
        let z = z.max(ELEVATION_EPS);
        let lp1 = gamma_logpdf(z, mix.k1, mix.theta1)?;
        let lp2 = gamma_logpdf(z, mix.k2, mix.theta2)?;
        let p = probs.row(i);
        loss -= (p[0] + p[1]) * lp1 + (p[2] + p[3]) * lp2;
        let g = grad.row_mut(i);
        g[0] = -lp1 / n;
        g[1] = -lp1 / n;
        g[2] = -lp2 / n;
        g[3] = -lp2 / n;
    }
    loss /= n;
    if !loss.is_finite() {
        return Err(GammaError::NonFinite("elevation NLL"));
    }
    Ok((loss, grad))
}

/// Serializes a mixture as a single `weight k1 theta1 k2 theta2` line with
/// five fractional digits.
pub fn format_mixture(mix: &GammaMixture) -> String {
    format!("{:.5} {:.5} {:.5} {:.5} {:.5}\n", mix.weight, mix.k1, mix.theta1, mix.k2, mix.theta2)
}

pub fn parse_mixture(text: &str) -> Result<GammaMixture, GammaError> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| GammaError::Parse(format!("bad number '{t}'"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != 5 {
        return Err(GammaError::Parse(format!("expected 5 values, got {}", vals.len())));
    }
    let mix = GammaMixture {
        weight: vals[0],
        k1: vals[1],
        theta1: vals[2],
        k2: vals[3],
        theta2: vals[4],
    };
    mix.validate()?;
    Ok(mix)
}

pub fn save_mixture(path: &Path, mix: &GammaMixture) -> Result<(), GammaError> {
    std::fs::write(path, format_mixture(mix))?;
    Ok(())
}

pub fn load_mixture(path: &Path) -> Result<GammaMixture, GammaError> {
    parse_mixture(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn logpdf_matches_closed_forms() {
        // k=1, θ=1: exponential, ln f = −z.
        assert_relative_eq!(gamma_logpdf(0.7, 1.0, 1.0).unwrap(), -0.7, epsilon = 1e-12);
        // k=2, θ=0.5: f = 4 z e^{−2z} (Γ(2)=1).
        let z = 1.3f64;
        let expect = (4.0f64).ln() + z.ln() - 2.0 * z;
        assert_relative_eq!(gamma_logpdf(z, 2.0, 0.5).unwrap(), expect, epsilon = 1e-12);
        // k=1.5, θ=2: Γ(1.5)=√π/2.
        let z = 0.4f64;
        let expect =
            0.5 * z.ln() - z / 2.0 - (std::f64::consts::PI.sqrt() / 2.0).ln() - 1.5 * (2.0f64).ln();
        assert_relative_eq!(gamma_logpdf(z, 1.5, 2.0).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn logpdf_rejects_non_positive_inputs() {
        assert!(gamma_logpdf(0.0, 1.0, 1.0).is_err());
        assert!(gamma_logpdf(1.0, 0.0, 1.0).is_err());
        assert!(gamma_logpdf(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn trigamma_known_values_and_digamma_consistency() {
        // ψ′(1) = π²/6;  ψ′(1/2) = π²/2.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        assert_relative_eq!(trigamma(1.0), pi2 / 6.0, epsilon = 1e-10);
        assert_relative_eq!(trigamma(0.5), pi2 / 2.0, epsilon = 1e-10);
        // Finite difference of digamma.
        for &x in &[0.2f64, 0.9, 2.3, 7.7, 40.0] {
            let h = 1e-6 * x.max(1.0);
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            assert_relative_eq!(trigamma(x), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn shape_solver_inverts_the_profile_equation() {
        for &k_true in &[0.01f64, 0.3, 1.0, 1.5, 3.0, 25.0, 400.0] {
            let s = k_true.ln() - digamma(k_true);
            assert_relative_eq!(solve_shape(s), k_true, max_relative = 1e-9);
        }
        assert_eq!(solve_shape(1e5), SHAPE_MIN);
        assert_eq!(solve_shape(1e-9), SHAPE_MAX);
    }

    #[test]
    fn responsibilities_match_direct_bayes() {
        let mix = GammaMixture { weight: 0.3, k1: 1.5, theta1: 0.05, k2: 3.0, theta2: 0.8 };
        let zs = [0.01, 0.2, 1.0, 3.0];
        let r = responsibilities(&mix, &zs).unwrap();
        for (&z, &ri) in zs.iter().zip(&r) {
            let f1 = gamma_logpdf(z, mix.k1, mix.theta1).unwrap().exp();
            let f2 = gamma_logpdf(z, mix.k2, mix.theta2).unwrap().exp();
            let direct = mix.weight * f1 / (mix.weight * f1 + (1.0 - mix.weight) * f2);
            assert_relative_eq!(ri, direct, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&ri));
        }
        // Low elevations should lean to component 1, high to component 2.
        assert!(r[0] > 0.9);
        assert!(r[3] < 0.1);
    }

    fn sample_mixture(mix: &GammaMixture, n: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        use rand_distr::{Distribution, Gamma};
        let mut rng = crate::rng::rng_from_seed(seed);
        let g1 = Gamma::new(mix.k1, mix.theta1).unwrap();
        let g2 = Gamma::new(mix.k2, mix.theta2).unwrap();
        (0..n)
            .map(|_| {
                if rng.random_range(0.0..1.0) < mix.weight {
                    g1.sample(&mut rng)
                } else {
                    g2.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn ecm_recovers_parameters_and_never_decreases_likelihood() {
        let truth = GammaMixture { weight: 0.6, k1: 1.5, theta1: 0.05, k2: 3.0, theta2: 0.8 };
        let zs = sample_mixture(&truth, 5000, 123);
        let init = GammaMixture::moment_init(&zs, 0.5);
        let fit = ecm_fit(&zs, init, 1e-8, 300).unwrap();
        for pair in fit.log_likelihood.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9, "log-likelihood decreased: {pair:?}");
        }
        let m = fit.mixture;
        assert!((m.weight - truth.weight).abs() < 0.05, "weight {}", m.weight);
        assert!((m.k1 - truth.k1).abs() / truth.k1 < 0.15, "k1 {}", m.k1);
        assert!((m.theta1 - truth.theta1).abs() / truth.theta1 < 0.15, "theta1 {}", m.theta1);
        assert!((m.k2 - truth.k2).abs() / truth.k2 < 0.15, "k2 {}", m.k2);
        assert!((m.theta2 - truth.theta2).abs() / truth.theta2 < 0.15, "theta2 {}", m.theta2);
    }

    #[test]
    fn ecm_rejects_degenerate_inputs() {
        let init = GammaMixture { weight: 0.5, k1: 1.0, theta1: 1.0, k2: 2.0, theta2: 1.0 };
        assert!(matches!(
            ecm_fit(&[0.5; 5], init, 1e-8, 10),
            Err(GammaError::TooFewSamples { .. })
        ));
        assert!(matches!(ecm_fit(&[0.5; 64], init, 1e-8, 10), Err(GammaError::ZeroVariance)));
    }

    #[test]
    fn nll_is_linear_in_probabilities_with_constant_gradient() {
        let mix = GammaMixture { weight: 0.4, k1: 1.2, theta1: 0.1, k2: 2.5, theta2: 0.7 };
        let zs = [0.05, 0.4, 1.7];
        let n = zs.len() as f64;
        let probs = Mat::from_vec(
            3,
            4,
            vec![0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.25, 0.25, 0.0, 0.0, 0.5, 0.5],
        );
        let (loss, grad) = elevation_nll(&mix, &probs, &zs).unwrap();
        // Hand-rolled expected value.
        let mut expect = 0.0;
        for (i, &z) in zs.iter().enumerate() {
            let lp1 = gamma_logpdf(z, mix.k1, mix.theta1).unwrap();
            let lp2 = gamma_logpdf(z, mix.k2, mix.theta2).unwrap();
            let p = probs.row(i);
            expect -= ((p[0] + p[1]) * lp1 + (p[2] + p[3]) * lp2) / n;
            assert_relative_eq!(grad.get(i, 0), -lp1 / n, epsilon = 1e-12);
            assert_relative_eq!(grad.get(i, 3), -lp2 / n, epsilon = 1e-12);
        }
        assert_relative_eq!(loss, expect, epsilon = 1e-12);
        // Linearity: l(p + d) − l(p) = <grad, d> exactly (up to float error).
        let mut shifted = probs.clone();
        let delta = 0.05;
        shifted.set(1, 2, shifted.get(1, 2) + delta);
        let (loss2, _) = elevation_nll(&mix, &shifted, &zs).unwrap();
        assert_relative_eq!(loss2 - loss, grad.get(1, 2) * delta, epsilon = 1e-10);
    }

    #[test]
    fn mixture_file_round_trip_keeps_five_decimals() {
        let mix =
            GammaMixture { weight: 0.61234, k1: 1.49876, theta1: 0.05001, k2: 3.0, theta2: 0.8 };
        let text = format_mixture(&mix);
        assert_eq!(text, "0.61234 1.49876 0.05001 3.00000 0.80000\n");
        let back = parse_mixture(&text).unwrap();
        assert_eq!(back, mix);
        assert!(parse_mixture("0.5 1 1 1").is_err());
        assert!(parse_mixture("1.5 1 1 1 1").is_err());
    }
}
