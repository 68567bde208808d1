//! End-to-end estimation: conditional CDF per censored subject, weights,
//! augmentation, exact solve.
//!
//! The conditional CDF does not depend on `tau`, so the per-subject endpoint
//! values are computed once ([`SubjectCdfs`]) and reused across quantile
//! levels and across the two weighting rules.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, Observation, QuantileFit, QuantileLevel};
use crate::npmle::{EmOptions, EmProblem, KernelSpec};
use crate::parallel;
use crate::solver::{self, CheckLossProblem, ZERO_WEIGHT};
use crate::weighting::{
    censoring_weights, default_m_star, rows_from_weights, CdfProvider, WeightRule,
    DEFAULT_BETA_RADIUS,
};

/// Which estimator to run.
#[derive(Clone)]
pub enum EstimatorKind {
    /// Kernel-smoothed local EM for `F(t | x)` with redistribution weights.
    IcqrKernel,
    /// Same conditional CDF, but order-indeterminate subjects get zero weight.
    Zfd,
    /// Redistribution weights from a caller-supplied conditional CDF.
    IcqrPlugin(Arc<dyn CdfProvider + Send>),
}

impl EstimatorKind {
    pub fn rule(&self) -> WeightRule {
        match self {
            EstimatorKind::Zfd => WeightRule::ZeroIndeterminate,
            _ => WeightRule::Redistribute,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::IcqrKernel => "ks",
            EstimatorKind::Zfd => "zfd",
            EstimatorKind::IcqrPlugin(_) => "plugin",
        }
    }
}

impl fmt::Debug for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::IcqrKernel => "IcqrKernel",
            EstimatorKind::Zfd => "Zfd",
            EstimatorKind::IcqrPlugin(_) => "IcqrPlugin(..)",
        })
    }
}

/// Kernel used by the local EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KernelChoice {
    /// Normal-scale bandwidths and indicator kernels for discrete covariates.
    Auto,
    /// One bandwidth for every continuous covariate.
    Bandwidth(f64),
    /// One bandwidth per non-intercept covariate.
    Bandwidths(Vec<f64>),
    Explicit(KernelSpec),
}

impl KernelChoice {
    pub fn resolve(&self, dataset: &Dataset) -> Result<KernelSpec> {
        let spec = match self {
            KernelChoice::Auto => KernelSpec::auto(dataset)?,
            KernelChoice::Bandwidth(h) => KernelSpec::with_bandwidth(dataset, *h)?,
            KernelChoice::Bandwidths(hs) => KernelSpec::with_bandwidths(dataset, hs)?,
            KernelChoice::Explicit(spec) => spec.clone(),
        };
        spec.check(dataset.p())?;
        Ok(spec)
    }
}

/// Finite stand-in for infinite endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MStar {
    Auto,
    Explicit(f64),
}

impl MStar {
    pub fn resolve(self, dataset: &Dataset) -> f64 {
        match self {
            MStar::Auto => default_m_star(dataset, DEFAULT_BETA_RADIUS),
            MStar::Explicit(m) => m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub kernel: KernelChoice,
    pub tau: QuantileLevel,
    pub m_star: MStar,
    pub em: EmOptions,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, tau: QuantileLevel) -> Self {
        EstimatorSpec {
            kind,
            kernel: KernelChoice::Auto,
            tau,
            m_star: MStar::Auto,
            em: EmOptions::default(),
        }
    }

    pub fn with_kernel(mut self, kernel: KernelChoice) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_tau(mut self, tau: QuantileLevel) -> Self {
        self.tau = tau;
        self
    }
}

/// Convergence record of the local EM runs behind one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmSummary {
    pub runs: usize,
    pub converged: usize,
    pub max_iterations: usize,
    pub median_iterations: usize,
    /// Largest number of grid points without weighted subjects at risk.
    pub max_dropped_points: usize,
}

/// `F(L)`, `F(R)`, iterations, converged, dropped grid points.
type SubjectFit = (f64, f64, usize, bool, usize);

/// `(F(L_i | x_i), F(R_i | x_i))` for every censored subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectCdfs {
    endpoints: Vec<Option<(f64, f64)>>,
    pub em: EmSummary,
}

impl SubjectCdfs {
    /// Local EM fits at each censored subject's own covariates.
    ///
    /// `multipliers` scales the kernel weights before normalization.
    pub fn kernel(
        dataset: &Dataset,
        spec: &KernelSpec,
        multipliers: Option<&[f64]>,
        opts: EmOptions,
    ) -> Result<Self> {
        spec.check(dataset.p())?;
        let problem = EmProblem::new(dataset)?;
        let obs = dataset.observations();
        let fits = parallel::map_indexed(obs.len(), |i| -> Result<Option<SubjectFit>> {
            let o = &obs[i];
            if o.exact {
                return Ok(None);
            }
            let curve = problem.fit_at(&o.covariates, dataset, spec, multipliers, opts)?;
            Ok(Some((
                curve.eval(o.left),
                curve.eval(o.right),
                curve.iterations,
                curve.converged,
                curve.dropped_points,
            )))
        });
        let mut endpoints = Vec::with_capacity(obs.len());
        let mut iterations = Vec::new();
        let mut em = EmSummary::default();
        for fit in fits {
            match fit? {
                None => endpoints.push(None),
                Some((fl, fr, it, conv, dropped)) => {
                    endpoints.push(Some((fl, fr)));
                    iterations.push(it);
                    em.runs += 1;
                    em.converged += usize::from(conv);
                    em.max_iterations = em.max_iterations.max(it);
                    em.max_dropped_points = em.max_dropped_points.max(dropped);
                }
            }
        }
        iterations.sort_unstable();
        em.median_iterations = iterations.get(iterations.len() / 2).copied().unwrap_or(0);
        Ok(SubjectCdfs { endpoints, em })
    }

    /// Endpoint values from any conditional CDF.
    pub fn from_provider(dataset: &Dataset, provider: &dyn CdfProvider) -> Result<Self> {
        let endpoints = dataset
            .iter()
            .enumerate()
            .map(|(i, o)| {
                if o.exact {
                    Ok(None)
                } else {
                    provider.endpoint_cdfs(i, o).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SubjectCdfs {
            endpoints,
            em: EmSummary::default(),
        })
    }

    /// Cached pair for subject `i`, `None` for exact subjects.
    pub fn get(&self, i: usize) -> Option<(f64, f64)> {
        self.endpoints.get(i).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }
}

impl CdfProvider for SubjectCdfs {
    fn cdf(&self, _t: f64, _x: &[f64]) -> Result<f64> {
        Err(IcqrError::ContractViolation(
            "per-subject cache only answers endpoint queries".into(),
        ))
    }

    fn endpoint_cdfs(&self, index: usize, _obs: &Observation) -> Result<(f64, f64)> {
        self.get(index).ok_or_else(|| {
            IcqrError::ContractViolation(format!("no cached endpoint values for subject {index}"))
        })
    }
}

/// Endpoint cache for `spec`, with optional perturbation multipliers.
pub fn subject_cdfs(
    dataset: &Dataset,
    spec: &EstimatorSpec,
    multipliers: Option<&[f64]>,
) -> Result<SubjectCdfs> {
    match &spec.kind {
        EstimatorKind::IcqrPlugin(provider) => SubjectCdfs::from_provider(dataset, provider.as_ref()),
        EstimatorKind::IcqrKernel | EstimatorKind::Zfd => {
            let kernel = spec.kernel.resolve(dataset)?;
            SubjectCdfs::kernel(dataset, &kernel, multipliers, spec.em)
        }
    }
    .map_err(|e| e.in_stage("conditional cdf"))
}

/// Weights, augmentation and solve from a prepared endpoint cache.
pub fn fit_from_cdfs(
    dataset: &Dataset,
    cdfs: &SubjectCdfs,
    tau: QuantileLevel,
    rule: WeightRule,
    m_star: f64,
    multipliers: Option<&[f64]>,
) -> Result<QuantileFit> {
    let weights =
        censoring_weights(dataset, cdfs, tau, rule).map_err(|e| e.in_stage("weighting"))?;
    let rows = rows_from_weights(dataset, &weights, m_star, multipliers)
        .map_err(|e| e.in_stage("weighting"))?;
    let usable = rows.iter().filter(|r| r.weight >= ZERO_WEIGHT).count();
    if rule == WeightRule::ZeroIndeterminate && usable < dataset.p() {
        return Err(IcqrError::TooFewRows {
            needed: dataset.p(),
            found: usable,
        }
        .in_stage("zero-weighting order-indeterminate subjects"));
    }
    let problem = CheckLossProblem::new(rows, tau).map_err(|e| e.in_stage("solver"))?;
    solver::solve(&problem).map_err(|e| e.in_stage("solver"))
}

fn check_multipliers(dataset: &Dataset, multipliers: &[f64]) -> Result<()> {
    if multipliers.len() != dataset.len() {
        return Err(IcqrError::InvalidArgument(format!(
            "expected {} multipliers, got {}",
            dataset.len(),
            multipliers.len()
        )));
    }
    if let Some(i) = multipliers.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
        return Err(IcqrError::InvalidArgument(format!(
            "multiplier {i} must be positive and finite, got {}",
            multipliers[i]
        )));
    }
    Ok(())
}

/// A fit together with what it took to produce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: QuantileFit,
    pub m_star: f64,
    pub em: EmSummary,
}

pub fn fit_report(dataset: &Dataset, spec: &EstimatorSpec) -> Result<FitReport> {
    let cdfs = subject_cdfs(dataset, spec, None)?;
    let m_star = spec.m_star.resolve(dataset);
    let fit = fit_from_cdfs(dataset, &cdfs, spec.tau, spec.kind.rule(), m_star, None)?;
    Ok(FitReport {
        fit,
        m_star,
        em: cdfs.em,
    })
}

/// Estimate of the regression quantile `beta(tau)`.
pub fn fit(dataset: &Dataset, spec: &EstimatorSpec) -> Result<QuantileFit> {
    fit_report(dataset, spec).map(|r| r.fit)
}

/// Fit with subject `i` weighted by `multipliers[i]` in both the local EM
/// and the check loss.
pub fn fit_with_multipliers(
    dataset: &Dataset,
    spec: &EstimatorSpec,
    multipliers: &[f64],
) -> Result<QuantileFit> {
    check_multipliers(dataset, multipliers)?;
    let cdfs = subject_cdfs(dataset, spec, Some(multipliers))?;
    let m_star = spec.m_star.resolve(dataset);
    fit_from_cdfs(dataset, &cdfs, spec.tau, spec.kind.rule(), m_star, Some(multipliers))
}

/// Independent fits over an increasing grid of quantile levels, sharing one
/// endpoint cache. Failures are reported per level.
pub fn quantile_process(
    dataset: &Dataset,
    spec: &EstimatorSpec,
    taus: &[QuantileLevel],
) -> Result<Vec<Result<QuantileFit>>> {
    check_tau_grid(taus)?;
    let cdfs = subject_cdfs(dataset, spec, None)?;
    let m_star = spec.m_star.resolve(dataset);
    let rule = spec.kind.rule();
    Ok(parallel::map_indexed(taus.len(), |k| {
        fit_from_cdfs(dataset, &cdfs, taus[k], rule, m_star, None)
    }))
}

pub(crate) fn check_tau_grid(taus: &[QuantileLevel]) -> Result<()> {
    if taus.is_empty() {
        return Err(IcqrError::InvalidArgument("quantile grid is empty".into()));
    }
    if taus.windows(2).any(|w| w[0].value() >= w[1].value()) {
        return Err(IcqrError::InvalidArgument(
            "quantile grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}
