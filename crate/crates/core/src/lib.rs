//! Vegetation stratum occupancy prediction from airborne LiDAR point clouds.
//!
//! The library takes circular forest plots — point clouds with radiometric
//! attributes — and predicts, for each of three vegetation strata (lower,
//! medium, higher), both a rasterized occupancy map and the plot-level
//! occupancy ratio.  Supervision is weak: training uses only the three
//! aggregated ratios per plot, never per-point labels.
//!
//! Pipeline: per-point class probabilities from a small point network
//! ([`pointnet`]), max-projection onto a pixel grid and aggregation over the
//! plot disk ([`raster`]), and a composite loss ([`loss`]) that combines the
//! ratio error with an entropy penalty and a Gamma-mixture elevation prior
//! ([`gamma`]).  [`synthgen`] builds labeled synthetic plots for testing,
//! [`baselines`] provides reference methods, and [`train`]/[`eval`] drive
//! optimization and scoring.  The `strata` binary exposes it all as a CLI
//! ([`cli`]).

pub mod baselines;
pub mod cli;
pub mod eval;
pub mod gamma;
pub mod loss;
pub mod mat;
pub mod plotio;
pub mod pointnet;
pub mod raster;
pub mod rng;
pub mod synthgen;
pub mod train;
