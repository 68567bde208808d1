//! Redistribution-of-mass weights and the augmented pseudo-data.
//!
//! Each censored subject is split into two pseudo-observations at its
//! endpoints. The left one receives `w`, the conditional probability that the
//! event falls below the fitted quantile given that it lies in the observed
//! interval; the right one receives `1 - w`.

use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{CensoringClass, Dataset, Observation, QuantileLevel};

/// Denominators below this are treated as zero when forming weights.
const DEGENERATE_MASS: f64 = 1e-12;

/// Default half-width of the coefficient box used to size `M*`.
pub const DEFAULT_BETA_RADIUS: f64 = 10.0;

/// Evaluates an estimate of the conditional distribution `F(t | x)`.
///
/// Implementations must be nondecreasing in `t`, return values in `[0, 1]`,
/// and map `t = -inf` to 0 and `t = +inf` to 1.
pub trait CdfProvider: Sync {
    fn cdf(&self, t: f64, x: &[f64]) -> Result<f64>;

    /// `(F(L_i | x_i), F(R_i | x_i))` for subject `index`.
    ///
    /// Providers that cache per-subject curves override this to avoid
    /// re-evaluating `x_i`.
    fn endpoint_cdfs(&self, index: usize, obs: &Observation) -> Result<(f64, f64)> {
        let _ = index;
        Ok((
            self.cdf(obs.left, &obs.covariates)?,
            self.cdf(obs.right, &obs.covariates)?,
        ))
    }
}

/// Wraps a closure as a [`CdfProvider`]. The infinite endpoints are handled
/// here so the closure only sees finite times.
pub struct FnCdf<F>(pub F);

impl<F> CdfProvider for FnCdf<F>
where
    F: Fn(f64, &[f64]) -> f64 + Sync,
{
    fn cdf(&self, t: f64, x: &[f64]) -> Result<f64> {
        if t == f64::NEG_INFINITY {
            return Ok(0.0);
        }
        if t == f64::INFINITY {
            return Ok(1.0);
        }
        let v = (self.0)(t, x);
        if !(0.0..=1.0).contains(&v) {
            return Err(IcqrError::ContractViolation(format!(
                "cdf returned {v} at t = {t}"
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LocalWeight(f64);

impl LocalWeight {
    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Exact,
    Left,
    Right,
}

/// One pseudo-observation handed to the check-loss solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRow {
    pub t: f64,
    pub covariates: Vec<f64>,
    pub weight: f64,
    /// Index of the source observation in the dataset.
    pub origin: usize,
    pub side: Side,
}

/// Weight given to the left endpoint of a censored subject.
///
/// `fl` and `fr` are the conditional CDF at the left and right endpoints. For
/// left-censored subjects `fl` is ignored (taken as 0); for right-censored
/// subjects `fr` is ignored (taken as 1).
pub fn local_weight(
    fl: f64,
    fr: f64,
    tau: QuantileLevel,
    class: CensoringClass,
) -> Result<LocalWeight> {
    let tau = tau.value();
    let (fl, fr) = match class {
        CensoringClass::Exact => {
            return Err(IcqrError::ContractViolation(
                "exact observations carry no censoring weight".into(),
            ))
        }
        CensoringClass::Interval => (fl, fr),
        CensoringClass::LeftCensored => (0.0, fr),
        CensoringClass::RightCensored => (fl, 1.0),
    };
    if !(0.0..=1.0).contains(&fl) || !(0.0..=1.0).contains(&fr) {
        return Err(IcqrError::ContractViolation(format!(
            "cdf values ({fl}, {fr}) outside [0, 1]"
        )));
    }
    if fl > fr {
        return Err(IcqrError::ContractViolation(format!(
            "F(L) = {fl} exceeds F(R) = {fr}"
        )));
    }
    let w = match class {
        CensoringClass::LeftCensored => {
            if fr < DEGENERATE_MASS {
                1.0
            } else {
                (tau / fr).min(1.0)
            }
        }
        _ => {
            if fl >= tau {
                1.0
            } else if fr <= tau {
                0.0
            } else if fr - fl < DEGENERATE_MASS {
                if tau <= 0.5 * (fl + fr) {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((tau - fl) / (fr - fl)).clamp(0.0, 1.0)
            }
        }
    };
    Ok(LocalWeight(w))
}

/// True when the ordering of the event and the fitted quantile is undetermined
/// by the interval, i.e. `F(L|x) < tau < F(R|x)`.
pub fn is_order_indeterminate(fl: f64, fr: f64, tau: QuantileLevel, class: CensoringClass) -> bool {
    let (fl, fr) = match class {
        CensoringClass::Exact => return false,
        CensoringClass::Interval => (fl, fr),
        CensoringClass::LeftCensored => (0.0, fr),
        CensoringClass::RightCensored => (fl, 1.0),
    };
    fl < tau.value() && tau.value() < fr
}

/// Scale-aware default for the finite stand-in of an infinite endpoint.
pub fn default_m_star(dataset: &Dataset, beta_radius: f64) -> f64 {
    let max_endpoint = max_finite_endpoint(dataset);
    let max_norm = dataset
        .iter()
        .map(|o| o.covariates.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    10.0 * (max_endpoint + max_norm * beta_radius)
}

fn max_finite_endpoint(dataset: &Dataset) -> f64 {
    dataset
        .iter()
        .flat_map(|o| [o.left, o.right])
        .filter(|v| v.is_finite())
        .map(f64::abs)
        .fold(0.0, f64::max)
}

/// Which weighting rule turns censored subjects into pseudo-rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightRule {
    /// Every censored subject keeps its redistribution weights.
    Redistribute,
    /// Order-indeterminate subjects get zero weight on both rows.
    ZeroIndeterminate,
}

/// How one subject enters the augmented data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SubjectWeight {
    Exact,
    /// Censored with left-row weight `w` (right row gets `1 - w`).
    Censored(f64),
    /// Censored and zeroed out on both rows.
    Dropped,
}

/// Per-subject weights under the given rule.
pub fn censoring_weights(
    dataset: &Dataset,
    cdf: &dyn CdfProvider,
    tau: QuantileLevel,
    rule: WeightRule,
) -> Result<Vec<SubjectWeight>> {
    dataset
        .iter()
        .enumerate()
        .map(|(i, obs)| {
            if obs.exact {
                return Ok(SubjectWeight::Exact);
            }
            let class = obs.class()?;
            let (fl, fr) = cdf.endpoint_cdfs(i, obs)?;
            if rule == WeightRule::ZeroIndeterminate && is_order_indeterminate(fl, fr, tau, class) {
                return Ok(SubjectWeight::Dropped);
            }
            Ok(SubjectWeight::Censored(local_weight(fl, fr, tau, class)?.value()))
        })
        .collect()
}

/// Expands subjects into pseudo-rows given their left weights.
///
/// `multipliers`, when present, scales every row of subject `i` by `eta_i`.
pub fn rows_from_weights(
    dataset: &Dataset,
    weights: &[SubjectWeight],
    m_star: f64,
    multipliers: Option<&[f64]>,
) -> Result<Vec<AugmentedRow>> {
    check_m_star(dataset, m_star)?;
    let mut rows = Vec::with_capacity(dataset.len() + dataset.censored_count());
    for (i, (obs, w)) in dataset.iter().zip(weights).enumerate() {
        let eta = multipliers.map_or(1.0, |m| m[i]);
        let (wl, wr) = match *w {
            SubjectWeight::Exact => {
                rows.push(AugmentedRow {
                    t: obs.left,
                    covariates: obs.covariates.clone(),
                    weight: eta,
                    origin: i,
                    side: Side::Exact,
                });
                continue;
            }
            SubjectWeight::Censored(w) => (w, 1.0 - w),
            SubjectWeight::Dropped => (0.0, 0.0),
        };
        let left = if obs.left.is_finite() { obs.left } else { -m_star };
        let right = if obs.right.is_finite() { obs.right } else { m_star };
        rows.push(AugmentedRow {
            t: left,
            covariates: obs.covariates.clone(),
            weight: eta * wl,
            origin: i,
            side: Side::Left,
        });
        rows.push(AugmentedRow {
            t: right,
            covariates: obs.covariates.clone(),
            weight: eta * wr,
            origin: i,
            side: Side::Right,
        });
    }
    Ok(rows)
}

fn check_m_star(dataset: &Dataset, m_star: f64) -> Result<()> {
    if !(m_star > 0.0) || !m_star.is_finite() {
        return Err(IcqrError::InvalidArgument(format!(
            "M* must be positive and finite, got {m_star}"
        )));
    }
    let max_endpoint = max_finite_endpoint(dataset);
    if m_star <= max_endpoint {
        return Err(IcqrError::InvalidArgument(format!(
            "M* = {m_star} does not exceed the largest finite endpoint {max_endpoint}"
        )));
    }
    Ok(())
}

/// Augmented data with the full redistribution weights.
pub fn build_augmented(
    dataset: &Dataset,
    cdf: &dyn CdfProvider,
    tau: QuantileLevel,
    m_star: f64,
) -> Result<Vec<AugmentedRow>> {
    check_m_star(dataset, m_star)?;
    let weights = censoring_weights(dataset, cdf, tau, WeightRule::Redistribute)?;
    rows_from_weights(dataset, &weights, m_star, None)
}

/// Augmented data where order-indeterminate subjects are zeroed out.
pub fn zfd_weights(
    dataset: &Dataset,
    cdf: &dyn CdfProvider,
    tau: QuantileLevel,
    m_star: f64,
) -> Result<Vec<AugmentedRow>> {
    check_m_star(dataset, m_star)?;
    let weights = censoring_weights(dataset, cdf, tau, WeightRule::ZeroIndeterminate)?;
    rows_from_weights(dataset, &weights, m_star, None)
}
