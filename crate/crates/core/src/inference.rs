//! Perturbed-resampling standard errors and confidence intervals.
//!
//! Replicate `b` draws i.i.d. standard exponential multipliers from stream
//! `b` of the configured seed, refits with every subject's contribution
//! scaled by its multiplier, and the spread of the refits estimates the
//! sampling variability. The bandwidth is held at its full-sample value.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, QuantileFit, QuantileLevel};
use crate::parallel;
use crate::pipeline::{self, fit_from_cdfs, EstimatorKind, EstimatorSpec, KernelChoice};
use crate::stats::{normal_quantile, order_statistic, sample_sd};
use crate::weighting::WeightRule;

/// Largest tolerated share of failed replicates, in percent.
pub const MAX_FAILED_PCT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiKind {
    Percentile,
    Wald,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_replicates: usize,
    pub seed: u64,
    pub ci_level: f64,
    pub ci_kind: CiKind,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_replicates: 200,
            seed: 0,
            ci_level: 0.95,
            ci_kind: CiKind::Percentile,
        }
    }
}

impl BootstrapConfig {
    pub fn check(&self) -> Result<()> {
        if self.n_replicates < 2 {
            return Err(IcqrError::InvalidArgument(format!(
                "need at least 2 bootstrap replicates, got {}",
                self.n_replicates
            )));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(IcqrError::InvalidArgument(format!(
                "confidence level must lie in (0, 1), got {}",
                self.ci_level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub beta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    /// Successful perturbed estimates, in replicate order.
    pub replicates: Vec<Vec<f64>>,
    pub failed: usize,
    pub ci_kind: CiKind,
    pub ci_level: f64,
}

/// Multipliers of replicate `b`: i.i.d. standard exponential.
pub fn draw_multipliers(seed: u64, b: usize, n: usize) -> Vec<f64> {
    let mut rng = parallel::stream_rng(seed, b as u64);
    (0..n)
        .map(|_| {
            let e: f64 = rng.sample(Exp1);
            // Exp1 can return exactly 0 with vanishing probability.
            e.max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Full refit with every subject's contribution scaled by its multiplier.
pub fn perturb_fit(
    dataset: &Dataset,
    tau: QuantileLevel,
    spec: &EstimatorSpec,
    multipliers: &[f64],
) -> Result<QuantileFit> {
    let spec = spec.clone().with_tau(tau);
    pipeline::fit_with_multipliers(dataset, &spec, multipliers)
}

/// Standard errors and intervals from stored replicates.
pub fn summarize(
    beta_hat: Vec<f64>,
    replicates: Vec<Vec<f64>>,
    failed: usize,
    config: &BootstrapConfig,
) -> Result<InferenceResult> {
    config.check()?;
    let total = replicates.len() + failed;
    if failed * 100 > MAX_FAILED_PCT * total {
        return Err(IcqrError::TooManyFailures {
            failed,
            total,
            limit_pct: MAX_FAILED_PCT,
        });
    }
    let p = beta_hat.len();
    let alpha = 1.0 - config.ci_level;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut se = Vec::with_capacity(p);
    let mut ci_lower = Vec::with_capacity(p);
    let mut ci_upper = Vec::with_capacity(p);
    for k in 0..p {
        let column: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
        let s = sample_sd(&column);
        se.push(s);
        match config.ci_kind {
            CiKind::Wald => {
                ci_lower.push(beta_hat[k] - z * s);
                ci_upper.push(beta_hat[k] + z * s);
            }
            CiKind::Percentile => {
                ci_lower.push(order_statistic(&column, alpha / 2.0));
                ci_upper.push(order_statistic(&column, 1.0 - alpha / 2.0));
            }
        }
    }
    Ok(InferenceResult {
        beta_hat,
        se,
        ci_lower,
        ci_upper,
        replicates,
        failed,
        ci_kind: config.ci_kind,
        ci_level: config.ci_level,
    })
}

/// Bootstrap for one estimator at one quantile level.
pub fn bootstrap(
    dataset: &Dataset,
    tau: QuantileLevel,
    spec: &EstimatorSpec,
    config: &BootstrapConfig,
) -> Result<InferenceResult> {
    let spec = spec.clone().with_tau(tau);
    let beta_hat = pipeline::fit(dataset, &spec)?.beta;
    let mut out = bootstrap_grid(dataset, &spec, &[tau], &[spec.kind.rule()], config, &[beta_hat])?;
    Ok(out.remove(0))
}

/// Bootstrap over several quantile levels and weighting rules at once.
///
/// Each replicate computes its perturbed conditional CDFs once and reuses
/// them for every `(tau, rule)` pair. `beta_hats[k * rules.len() + r]` is
/// the full-sample estimate for level `k` and rule `r`; results come back in
/// the same order.
pub fn bootstrap_grid(
    dataset: &Dataset,
    spec: &EstimatorSpec,
    taus: &[QuantileLevel],
    rules: &[WeightRule],
    config: &BootstrapConfig,
    beta_hats: &[Vec<f64>],
) -> Result<Vec<InferenceResult>> {
    config.check()?;
    if beta_hats.len() != taus.len() * rules.len() {
        return Err(IcqrError::InvalidArgument(format!(
            "expected {} point estimates, got {}",
            taus.len() * rules.len(),
            beta_hats.len()
        )));
    }
    let n = dataset.len();
    let m_star = spec.m_star.resolve(dataset);
    // Resolve the kernel once so the bandwidth stays fixed across replicates.
    let mut fixed = spec.clone();
    if !matches!(spec.kind, EstimatorKind::IcqrPlugin(_)) {
        fixed.kernel = KernelChoice::Explicit(spec.kernel.resolve(dataset)?);
    }
    let cells = taus.len() * rules.len();

    let per_replicate: Vec<Vec<Option<Vec<f64>>>> =
        parallel::map_indexed(config.n_replicates, |b| {
            let eta = draw_multipliers(config.seed, b, n);
            let cdfs = match pipeline::subject_cdfs(dataset, &fixed, Some(&eta)) {
                Ok(c) => c,
                Err(_) => return vec![None; cells],
            };
            let mut out = Vec::with_capacity(cells);
            for &tau in taus {
                for &rule in rules {
                    out.push(
                        fit_from_cdfs(dataset, &cdfs, tau, rule, m_star, Some(&eta))
                            .ok()
                            .map(|f| f.beta),
                    );
                }
            }
            out
        });

    (0..cells)
        .map(|c| {
            let mut reps = Vec::with_capacity(config.n_replicates);
            let mut failed = 0;
            for row in &per_replicate {
                match &row[c] {
                    Some(beta) => reps.push(beta.clone()),
                    None => failed += 1,
                }
            }
            summarize(beta_hats[c].clone(), reps, failed, config)
        })
        .collect()
}
