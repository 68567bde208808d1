//! Replicated studies and their summary metrics.

use serde::{Deserialize, Serialize};

use super::{calibrate_p0, generate, Scheme, SimScenario, CALIBRATION_N};
use crate::error::{IcqrError, Result};
use crate::inference::{bootstrap_grid, BootstrapConfig, CiKind};
use crate::model::Dataset;
use crate::parallel;
use crate::pipeline::{fit_from_cdfs, subject_cdfs, EstimatorKind, EstimatorSpec, KernelChoice};
use crate::stats::{mean, normal_quantile, pairwise_sum, sample_sd};
use crate::weighting::WeightRule;

/// Largest tolerated share of failed data replicates, in percent.
pub const MAX_FAILED_PCT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimator {
    /// Kernel-smoothed redistribution weights.
    Ks,
    /// Zero weight for order-indeterminate subjects.
    Zfd,
}

impl Estimator {
    pub fn rule(self) -> WeightRule {
        match self {
            Estimator::Ks => WeightRule::Redistribute,
            Estimator::Zfd => WeightRule::ZeroIndeterminate,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Ks => "ks",
            Estimator::Zfd => "zfd",
        }
    }
}

/// What to run for every simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDesign {
    pub scenario: SimScenario,
    /// The first entry is the reference for relative efficiency.
    pub estimators: Vec<Estimator>,
    pub n_replicates: usize,
    /// Bootstrap draws per replicate; 0 skips standard errors and coverage.
    pub n_bootstrap: usize,
    pub ci_level: f64,
    pub kernel: KernelChoice,
}

impl StudyDesign {
    pub fn new(scenario: SimScenario, estimators: Vec<Estimator>, n_replicates: usize) -> Self {
        StudyDesign {
            scenario,
            estimators,
            n_replicates,
            n_bootstrap: 0,
            ci_level: 0.95,
            kernel: KernelChoice::Auto,
        }
    }

    pub fn check(&self) -> Result<()> {
        self.scenario.check()?;
        if self.n_replicates < 2 {
            return Err(IcqrError::InvalidArgument(format!(
                "a study needs at least 2 replicates, got {}",
                self.n_replicates
            )));
        }
        if self.estimators.is_empty() {
            return Err(IcqrError::InvalidArgument("no estimators to run".into()));
        }
        if self.n_bootstrap == 1 {
            return Err(IcqrError::InvalidArgument(
                "bootstrap needs at least 2 draws (or 0 to skip)".into(),
            ));
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefMetrics {
    pub bias: f64,
    /// Sample standard deviation of the estimates.
    pub ese: f64,
    /// Mean bootstrap standard error.
    pub bse: Option<f64>,
    /// Coverage of the Wald interval.
    pub cp: Option<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyMetrics {
    pub estimator: Estimator,
    pub coefficients: Vec<CoefMetrics>,
    /// `E ||beta_hat - beta||^2`.
    pub mse_total: f64,
    /// `mse_reference / mse_this`, per coefficient.
    pub re: Vec<f64>,
    pub re_total: f64,
    pub estimates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub scenario: SimScenario,
    pub metrics: Vec<StudyMetrics>,
    /// Mean censored fraction over the replicates.
    pub censored_fraction: f64,
    pub replicates: usize,
    pub failed: usize,
}

impl StudyReport {
    pub fn metrics_for(&self, estimator: Estimator) -> Option<&StudyMetrics> {
        self.metrics.iter().find(|m| m.estimator == estimator)
    }
}

/// Bias, spread, coverage and error of replicated estimates against `truth`.
///
/// `ses`, when given, holds one standard-error vector per estimate.
pub fn coefficient_metrics(
    estimates: &[Vec<f64>],
    ses: Option<&[Vec<f64>]>,
    truth: &[f64],
    ci_level: f64,
) -> Vec<CoefMetrics> {
    let z = normal_quantile(0.5 + 0.5 * ci_level);
    (0..truth.len())
        .map(|k| {
            let col: Vec<f64> = estimates.iter().map(|b| b[k]).collect();
            let sq: Vec<f64> = col.iter().map(|b| (b - truth[k]).powi(2)).collect();
            let (bse, cp) = match ses {
                Some(ses) => {
                    let se: Vec<f64> = ses.iter().map(|s| s[k]).collect();
                    let covered = col
                        .iter()
                        .zip(&se)
                        .filter(|(b, s)| (*b - truth[k]).abs() <= z * *s)
                        .count();
                    (Some(mean(&se)), Some(covered as f64 / col.len() as f64))
                }
                None => (None, None),
            };
            CoefMetrics {
                bias: mean(&col) - truth[k],
                ese: sample_sd(&col),
                bse,
                cp,
                mse: mean(&sq),
            }
        })
        .collect()
}

/// One replicate: estimates (and standard errors) per estimator.
struct ReplicateOutcome {
    betas: Vec<Vec<f64>>,
    ses: Option<Vec<Vec<f64>>>,
    censored_fraction: f64,
}

fn run_replicate(design: &StudyDesign, r: usize) -> Result<ReplicateOutcome> {
    let mut scenario = design.scenario.clone();
    scenario.seed = parallel::child_seed(design.scenario.seed, 2 * r as u64);
    let data = generate(&scenario)?;
    let dataset: &Dataset = &data.dataset;
    let spec = EstimatorSpec::new(EstimatorKind::IcqrKernel, scenario.tau).with_kernel(design.kernel.clone());
    let cdfs = subject_cdfs(dataset, &spec, None)?;
    let m_star = spec.m_star.resolve(dataset);
    let rules: Vec<WeightRule> = design.estimators.iter().map(|e| e.rule()).collect();
    let betas = rules
        .iter()
        .map(|&rule| fit_from_cdfs(dataset, &cdfs, scenario.tau, rule, m_star, None).map(|f| f.beta))
        .collect::<Result<Vec<_>>>()?;
    let ses = if design.n_bootstrap >= 2 {
        let config = BootstrapConfig {
            n_replicates: design.n_bootstrap,
            seed: parallel::child_seed(design.scenario.seed, 2 * r as u64 + 1),
            ci_level: design.ci_level,
            ci_kind: CiKind::Wald,
        };
        let results = bootstrap_grid(dataset, &spec, &[scenario.tau], &rules, &config, &betas)?;
        Some(results.into_iter().map(|res| res.se).collect())
    } else {
        None
    };
    Ok(ReplicateOutcome {
        betas,
        ses,
        censored_fraction: dataset.censored_fraction(),
    })
}

/// Replicated fits of every estimator on common simulated datasets.
///
/// Replicate `r` draws its data and bootstrap multipliers from seeds derived
/// from `(scenario.seed, r)`; a replicate where any estimator fails is
/// dropped and counted.
pub fn run_study(design: &StudyDesign) -> Result<StudyReport> {
    design.check()?;
    let outcomes = parallel::map_indexed(design.n_replicates, |r| run_replicate(design, r));
    let mut kept = Vec::with_capacity(outcomes.len());
    let mut failed = 0;
    for o in outcomes {
        match o {
            Ok(o) => kept.push(o),
            Err(_) => failed += 1,
        }
    }
    if failed * 100 > MAX_FAILED_PCT * design.n_replicates || kept.len() < 2 {
        return Err(IcqrError::TooManyFailures {
            failed,
            total: design.n_replicates,
            limit_pct: MAX_FAILED_PCT,
        });
    }

    let truth = design.scenario.true_beta();
    let mut metrics: Vec<StudyMetrics> = design
        .estimators
        .iter()
        .enumerate()
        .map(|(e, &estimator)| {
            let estimates: Vec<Vec<f64>> = kept.iter().map(|o| o.betas[e].clone()).collect();
            let ses: Option<Vec<Vec<f64>>> = kept
                .iter()
                .map(|o| o.ses.as_ref().map(|s| s[e].clone()))
                .collect();
            let coefficients = coefficient_metrics(&estimates, ses.as_deref(), &truth, design.ci_level);
            let mse_total = pairwise_sum(&coefficients.iter().map(|c| c.mse).collect::<Vec<_>>());
            StudyMetrics {
                estimator,
                coefficients,
                mse_total,
                re: Vec::new(),
                re_total: 1.0,
                estimates,
            }
        })
        .collect();
    let reference: Vec<f64> = metrics[0].coefficients.iter().map(|c| c.mse).collect();
    let reference_total = metrics[0].mse_total;
    for m in &mut metrics {
        m.re = reference
            .iter()
            .zip(&m.coefficients)
            .map(|(r, c)| r / c.mse)
            .collect();
        m.re_total = reference_total / m.mse_total;
    }
    let fractions: Vec<f64> = kept.iter().map(|o| o.censored_fraction).collect();
    Ok(StudyReport {
        scenario: design.scenario.clone(),
        metrics,
        censored_fraction: mean(&fractions),
        replicates: kept.len(),
        failed,
    })
}

/// One cell of a censoring-rate or bandwidth sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Requested censoring rate or bandwidth.
    pub setting: f64,
    pub p0: f64,
    pub estimator: Estimator,
    pub mse: Vec<f64>,
    pub mse_total: f64,
    /// `log(mse_total * 100)`.
    pub log_mse: f64,
}

fn sweep_rows(setting: f64, report: &StudyReport) -> Vec<SweepRow> {
    report
        .metrics
        .iter()
        .map(|m| SweepRow {
            setting,
            p0: report.scenario.p0,
            estimator: m.estimator,
            mse: m.coefficients.iter().map(|c| c.mse).collect(),
            mse_total: m.mse_total,
            log_mse: (m.mse_total * 100.0).ln(),
        })
        .collect()
}

/// Runs the design at each censoring rate. A rate of 1 switches to the
/// fully interval-censored scheme; other rates calibrate `p0` first.
pub fn censoring_sweep(design: &StudyDesign, rates: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &rate in rates {
        let mut d = design.clone();
        if rate >= 1.0 {
            d.scenario.scheme = Scheme::Ic;
        } else {
            d.scenario.scheme = Scheme::Pic;
            d.scenario.p0 = calibrate_p0(&d.scenario, rate, CALIBRATION_N)?;
        }
        rows.extend(sweep_rows(rate, &run_study(&d)?));
    }
    Ok(rows)
}

/// Runs the design once per common bandwidth, on the same datasets.
pub fn bandwidth_sweep(design: &StudyDesign, bandwidths: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &h in bandwidths {
        let mut d = design.clone();
        d.kernel = KernelChoice::Bandwidth(h);
        rows.extend(sweep_rows(h, &run_study(&d)?));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::QuantileLevel;
    use crate::sim::{ErrorLaw, Hetero};

    #[test]
    fn constant_estimates() {
        let truth = [1.5, 1.0, 1.0];
        let exact = vec![truth.to_vec(); 10];
        let ses = vec![vec![0.1; 3]; 10];
        for m in coefficient_metrics(&exact, Some(&ses), &truth, 0.95) {
            assert_eq!((m.bias, m.ese, m.mse), (0.0, 0.0, 0.0));
            assert_eq!(m.cp, Some(1.0));
            assert!((m.bse.unwrap() - 0.1).abs() < 1e-15);
        }
        let off: Vec<Vec<f64>> = vec![truth.iter().map(|b| b + 0.1).collect(); 10];
        for m in coefficient_metrics(&off, None, &truth, 0.95) {
            assert!((m.bias - 0.1).abs() < 1e-12);
            assert!(m.ese < 1e-12);
            assert!((m.mse - 0.01).abs() < 1e-12);
            assert_eq!(m.cp, None);
        }
    }

    #[test]
    fn small_study_shape_and_determinism() {
        let tau = QuantileLevel::new(0.5).unwrap();
        let mut s = SimScenario::new(60, tau, ErrorLaw::ExtremeValue, Hetero::M1, Scheme::Pic);
        s.p0 = 0.6;
        s.seed = 5;
        let mut design = StudyDesign::new(s, vec![Estimator::Ks, Estimator::Zfd], 4);
        design.n_bootstrap = 5;
        let a = run_study(&design).unwrap();
        assert_eq!(a.metrics.len(), 2);
        assert!(a.metrics.iter().all(|m| m.coefficients.len() == 3));
        assert!(a.metrics[0].re.iter().all(|&r| r == 1.0));
        assert_eq!(a, run_study(&design).unwrap());
        design.n_replicates = 1;
        assert!(run_study(&design).is_err());
    }
}
