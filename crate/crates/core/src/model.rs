//! Domain types shared by every stage of the estimator.
//!
//! Times are on the log scale throughout. Missing endpoints of a censoring
//! interval are stored as IEEE infinities; the finite stand-in used by the
//! check-loss solver is only introduced when the augmented data are built.

use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};

/// One subject's censoring record together with its covariates.
///
/// For an exact observation `left == right == time`. For a censored one the
/// event is known to lie in `(left, right)` with `left < right`; either side
/// may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub exact: bool,
    pub left: f64,
    pub right: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CensoringClass {
    Exact,
    Interval,
    LeftCensored,
    RightCensored,
}

impl Observation {
    pub fn exact(time: f64, covariates: Vec<f64>) -> Self {
        Observation {
            exact: true,
            left: time,
            right: time,
            covariates,
        }
    }

    pub fn censored(left: f64, right: f64, covariates: Vec<f64>) -> Self {
        Observation {
            exact: false,
            left,
            right,
            covariates,
        }
    }

    /// The exact event time, if observed.
    pub fn time(&self) -> Option<f64> {
        self.exact.then_some(self.left)
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn class(&self) -> Result<CensoringClass> {
        classify(self)
    }

    pub fn is_censored(&self) -> bool {
        !self.exact
    }

    fn check(&self, index: usize) -> Result<()> {
        let bad = |reason: String| IcqrError::InvalidObservation { index, reason };
        if self.exact {
            if !self.left.is_finite() {
                return Err(bad(format!("exact time must be finite, got {}", self.left)));
            }
            if self.left != self.right {
                return Err(bad(format!(
                    "exact observation stores mismatched endpoints ({}, {})",
                    self.left, self.right
                )));
            }
        } else {
            if self.left.is_nan() || self.right.is_nan() {
                return Err(bad("interval endpoint is NaN".into()));
            }
            if self.left == f64::INFINITY || self.right == f64::NEG_INFINITY {
                return Err(bad(format!(
                    "interval ({}, {}) has an endpoint on the wrong side",
                    self.left, self.right
                )));
            }
            if self.left >= self.right {
                return Err(bad(format!(
                    "left endpoint {} is not below right endpoint {}",
                    self.left, self.right
                )));
            }
            if self.left == f64::NEG_INFINITY && self.right == f64::INFINITY {
                return Err(bad(
                    "interval (-inf, inf) carries no information about the event time".into(),
                ));
            }
        }
        if self.covariates.is_empty() {
            return Err(bad("covariate vector is empty".into()));
        }
        if let Some(k) = self.covariates.iter().position(|v| !v.is_finite()) {
            return Err(bad(format!("covariate {k} is not finite")));
        }
        if self.covariates[0] != 1.0 {
            return Err(bad(format!(
                "covariate 0 must be the intercept 1.0, got {}",
                self.covariates[0]
            )));
        }
        Ok(())
    }
}

/// Classifies an observation by which of its endpoints are finite.
pub fn classify(obs: &Observation) -> Result<CensoringClass> {
    if obs.exact {
        if !obs.left.is_finite() || obs.left != obs.right {
            return Err(IcqrError::ContractViolation(format!(
                "exact observation with endpoints ({}, {})",
                obs.left, obs.right
            )));
        }
        return Ok(CensoringClass::Exact);
    }
    if obs.left.is_nan() || obs.right.is_nan() || obs.left >= obs.right {
        return Err(IcqrError::ContractViolation(format!(
            "censored observation needs left < right, got ({}, {})",
            obs.left, obs.right
        )));
    }
    match (obs.left.is_finite(), obs.right.is_finite()) {
        (true, true) => Ok(CensoringClass::Interval),
        (false, true) => Ok(CensoringClass::LeftCensored),
        (true, false) => Ok(CensoringClass::RightCensored),
        (false, false) => Err(IcqrError::ContractViolation(
            "interval (-inf, inf) has no censoring class".into(),
        )),
    }
}

/// A validated collection of observations sharing one covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    observations: Vec<Observation>,
    p: usize,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let p = observations.first().map(Observation::p).unwrap_or(0);
        validate(Dataset { observations, p })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    pub fn censored_count(&self) -> usize {
        self.observations.iter().filter(|o| !o.exact).count()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored_count() as f64 / self.len() as f64
    }

    /// Covariate column `k` across all observations.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.observations.iter().map(|o| o.covariates[k]).collect()
    }

    pub fn into_observations(self) -> Vec<Observation> {
        self.observations
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.observations.iter()
    }
}

/// Checks every observation and returns the dataset unchanged when all pass.
///
/// The first offending row is reported by index.
pub fn validate(dataset: Dataset) -> Result<Dataset> {
    let Some(first) = dataset.observations.first() else {
        return Err(IcqrError::EmptyDataset);
    };
    let p = first.p();
    for (index, obs) in dataset.observations.iter().enumerate() {
        if obs.p() != p {
            return Err(IcqrError::InvalidObservation {
                index,
                reason: format!("has {} covariates, expected {p}", obs.p()),
            });
        }
        obs.check(index)?;
    }
    Ok(Dataset {
        observations: dataset.observations,
        p,
    })
}

/// A quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(QuantileLevel(tau))
        } else {
            Err(IcqrError::InvalidTau(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = IcqrError;

    fn try_from(tau: f64) -> Result<Self> {
        QuantileLevel::new(tau)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(tau: QuantileLevel) -> f64 {
        tau.0
    }
}

/// Coefficients at one quantile level, with the diagnostics of the solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub beta: Vec<f64>,
    pub tau: QuantileLevel,
    /// Weighted check loss of `beta` on the augmented rows (unnormalized sum).
    pub objective: f64,
    /// Euclidean norm of the estimating function at `beta`.
    pub subgradient_norm: f64,
    /// Number of augmented rows handed to the solver.
    pub n_used: usize,
}
