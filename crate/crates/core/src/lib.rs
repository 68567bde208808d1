//! Locally weighted quantile regression for interval-censored survival data.
//!
//! The estimator turns every censored subject into two weighted
//! pseudo-observations at its interval endpoints, with weights derived from a
//! kernel-smoothed nonparametric estimate of the conditional event-time
//! distribution, and then minimizes the weighted check loss exactly.
//!
//! Module map:
//! - [`model`]: observations, datasets, quantile levels, fits
//! - [`weighting`]: redistribution weights and augmented pseudo-data
//! - [`npmle`]: kernel weights, bandwidths and the local EM for `F(t | x)`
//! - [`turnbull`]: the unconditional self-consistent estimator
//! - [`solver`]: exact weighted check-loss minimization
//! - [`pipeline`]: end-to-end fits and quantile processes
//! - [`inference`]: perturbed-resampling standard errors and intervals
//! - [`sim`]: Monte Carlo data generation and study metrics
//! - [`io`]: CSV/JSON/config formats and the command implementations

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod npmle;
pub mod parallel;
pub mod pipeline;
pub mod sim;
pub mod solver;
pub mod stats;
pub mod turnbull;
pub mod weighting;

pub use error::{IcqrError, Result};
pub use model::{classify, validate, CensoringClass, Dataset, Observation, QuantileFit, QuantileLevel};
