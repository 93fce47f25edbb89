//! Bayesian spatial small-area estimation of forest stand structure.
//!
//! Univariate and multivariate (coregionalized) Gaussian-process regression
//! models are fit to inventory plots by MCMC, posterior predictive draws are
//! generated jointly for the grid cells of each stand and aggregated to
//! area-weighted stand means, and candidate models are compared with
//! spatially blocked cross-validation.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod prediction;
pub mod rng;
pub mod samplers;
pub mod sim;
pub mod spatial;

pub use error::{Error, Result};

/// Alternative module names.
pub use data as forest_data;
pub use spatial as spatial_cov;
