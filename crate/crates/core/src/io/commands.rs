//! What the `fit`, `curve` and `simulate` subcommands compute, independent
//! of argument parsing and file handling.

use std::io::Write;

use serde::Serialize;

use super::config::{P0Setting, StudyConfig};
use super::table::{format_value, CsvData};
use crate::error::{IcqrError, Result};
use crate::inference::{bootstrap_grid, draw_multipliers, BootstrapConfig, CiKind};
use crate::model::QuantileLevel;
use crate::npmle::{KernelComponent, KernelSpec};
use crate::parallel;
use crate::pipeline::{
    fit_from_cdfs, quantile_process, subject_cdfs, EmSummary, EstimatorKind, EstimatorSpec,
    KernelChoice,
};
use crate::sim::{calibrate_p0, run_study, StudyReport, CALIBRATION_N};
use crate::stats::order_statistic;
use crate::turnbull::{self, turnbull_weighted};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorName {
    Ks,
    Zfd,
}

impl EstimatorName {
    fn kind(self) -> EstimatorKind {
        match self {
            EstimatorName::Ks => EstimatorKind::IcqrKernel,
            EstimatorName::Zfd => EstimatorKind::Zfd,
        }
    }
}

/// Parses `auto`, `h`, or `h1,h2,...` (one per covariate).
pub fn parse_bandwidth(raw: &str) -> Result<KernelChoice> {
    if raw.eq_ignore_ascii_case("auto") {
        return Ok(KernelChoice::Auto);
    }
    let hs = raw
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| IcqrError::InvalidArgument(format!("bandwidth {s:?} is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(IcqrError::InvalidArgument("bandwidths must be positive".into()));
    }
    Ok(if hs.len() == 1 {
        KernelChoice::Bandwidth(hs[0])
    } else {
        KernelChoice::Bandwidths(hs)
    })
}

/// Parses `a:b:step`, a comma list, or a single level.
pub fn parse_tau_grid(raw: &str) -> Result<Vec<QuantileLevel>> {
    let bad = || IcqrError::InvalidArgument(format!("cannot read quantile grid {raw:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let values: Vec<f64> = if raw.contains(':') {
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(IcqrError::InvalidArgument(format!(
                "grid {raw:?} needs start <= end and a positive step"
            )));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize;
        // Rounding keeps values such as 0.1 + 2 * 0.05 printable as 0.2.
        (0..=count)
            .map(|k| ((a + k as f64 * step) * 1e10).round() / 1e10)
            .collect()
    } else {
        raw.split(',').map(num).collect::<Result<_>>()?
    };
    let taus = values
        .into_iter()
        .map(QuantileLevel::new)
        .collect::<Result<Vec<_>>>()?;
    crate::pipeline::check_tau_grid(&taus)?;
    Ok(taus)
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub tau: f64,
    pub estimator: EstimatorName,
    pub bandwidth: KernelChoice,
    /// Bootstrap replicates; 0 skips inference.
    pub bootstrap: usize,
    pub seed: u64,
    pub ci_kind: CiKind,
    pub ci_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub beta: f64,
    pub se: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub failed: usize,
    pub seed: u64,
    pub ci_kind: CiKind,
    pub ci_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitOutput {
    pub estimator: EstimatorName,
    pub tau: f64,
    pub n: usize,
    pub censored: usize,
    pub coefficients: Vec<CoefficientSummary>,
    pub objective: f64,
    pub subgradient_norm: f64,
    pub m_star: f64,
    /// Gaussian bandwidth per covariate; `null` for the intercept and
    /// discrete covariates.
    pub bandwidths: Vec<Option<f64>>,
    pub em: EmSummary,
    pub bootstrap: Option<BootstrapSummary>,
}

fn bandwidth_list(spec: &KernelSpec) -> Vec<Option<f64>> {
    spec.components
        .iter()
        .map(|c| match c {
            KernelComponent::Gaussian { bandwidth } => Some(*bandwidth),
            _ => None,
        })
        .collect()
}

fn bootstrap_config(replicates: usize, seed: u64, ci_kind: CiKind, ci_level: f64) -> BootstrapConfig {
    BootstrapConfig {
        n_replicates: replicates,
        seed,
        ci_level,
        ci_kind,
    }
}

/// Point estimate and, optionally, bootstrap inference at one level.
pub fn run_fit(data: &CsvData, opts: &FitOptions) -> Result<FitOutput> {
    let tau = QuantileLevel::new(opts.tau)?;
    let dataset = &data.dataset;
    let kernel = opts.bandwidth.resolve(dataset)?;
    let spec = EstimatorSpec::new(opts.estimator.kind(), tau).with_kernel(KernelChoice::Explicit(kernel.clone()));
    let cdfs = subject_cdfs(dataset, &spec, None)?;
    let m_star = spec.m_star.resolve(dataset);
    let fit = fit_from_cdfs(dataset, &cdfs, tau, spec.kind.rule(), m_star, None)?;

    let inference = if opts.bootstrap > 0 {
        let config = bootstrap_config(opts.bootstrap, opts.seed, opts.ci_kind, opts.ci_level);
        let mut res = bootstrap_grid(dataset, &spec, &[tau], &[spec.kind.rule()], &config, std::slice::from_ref(&fit.beta))
            .map_err(|e| e.in_stage("bootstrap"))?;
        Some(res.remove(0))
    } else {
        None
    };
    let coefficients = data
        .coefficient_names()
        .into_iter()
        .enumerate()
        .map(|(k, name)| CoefficientSummary {
            name,
            beta: fit.beta[k],
            se: inference.as_ref().map(|r| r.se[k]),
            ci_lower: inference.as_ref().map(|r| r.ci_lower[k]),
            ci_upper: inference.as_ref().map(|r| r.ci_upper[k]),
        })
        .collect();
    Ok(FitOutput {
        estimator: opts.estimator,
        tau: opts.tau,
        n: dataset.len(),
        censored: dataset.censored_count(),
        coefficients,
        objective: fit.objective,
        subgradient_norm: fit.subgradient_norm,
        m_star,
        bandwidths: bandwidth_list(&kernel),
        em: cdfs.em,
        bootstrap: inference.map(|r| BootstrapSummary {
            replicates: opts.bootstrap,
            failed: r.failed,
            seed: opts.seed,
            ci_kind: opts.ci_kind,
            ci_level: opts.ci_level,
        }),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct CurveOptions {
    pub taus: Vec<QuantileLevel>,
    pub estimator: EstimatorName,
    pub bandwidth: KernelChoice,
    pub bootstrap: usize,
    pub seed: u64,
    pub ci_level: f64,
}

/// One coefficient at one level; bounds come from percentile bootstrap bands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub tau: f64,
    pub coefficient: String,
    pub estimate: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Coefficient paths over a grid of levels.
pub fn run_curve(data: &CsvData, opts: &CurveOptions) -> Result<Vec<CurveRow>> {
    let dataset = &data.dataset;
    let kernel = opts.bandwidth.resolve(dataset)?;
    let first = *opts.taus.first().ok_or_else(|| IcqrError::InvalidArgument("empty grid".into()))?;
    let spec = EstimatorSpec::new(opts.estimator.kind(), first).with_kernel(KernelChoice::Explicit(kernel));
    let fits = quantile_process(dataset, &spec, &opts.taus)?
        .into_iter()
        .enumerate()
        .map(|(k, f)| f.map_err(|e| e.in_stage(if k == 0 { "first level" } else { "quantile grid" })))
        .collect::<Result<Vec<_>>>()?;
    let betas: Vec<Vec<f64>> = fits.iter().map(|f| f.beta.clone()).collect();
    let bands = if opts.bootstrap > 0 {
        let config = bootstrap_config(opts.bootstrap, opts.seed, CiKind::Percentile, opts.ci_level);
        Some(
            bootstrap_grid(dataset, &spec, &opts.taus, &[spec.kind.rule()], &config, &betas)
                .map_err(|e| e.in_stage("bootstrap"))?,
        )
    } else {
        None
    };
    let names = data.coefficient_names();
    let mut rows = Vec::new();
    for (t, tau) in opts.taus.iter().enumerate() {
        for (k, name) in names.iter().enumerate() {
            rows.push(CurveRow {
                tau: tau.value(),
                coefficient: name.clone(),
                estimate: betas[t][k],
                lower: bands.as_ref().map(|b| b[t].ci_lower[k]),
                upper: bands.as_ref().map(|b| b[t].ci_upper[k]),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct SurvivalOptions {
    pub bootstrap: usize,
    pub seed: u64,
    pub ci_level: f64,
    /// Report times on the raw scale (the data were log-transformed on reading).
    pub raw_times: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub time: f64,
    pub survival: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Unconditional survival curve at the support points, with pointwise
/// percentile bands from perturbed self-consistency fits.
pub fn run_survival(data: &CsvData, opts: &SurvivalOptions) -> Result<Vec<SurvivalRow>> {
    let dataset = &data.dataset;
    let est = turnbull::turnbull(dataset, turnbull::DEFAULT_TOL, turnbull::DEFAULT_MAX_ITER)?;
    let points = est.grid().points().to_vec();
    let bands = if opts.bootstrap > 0 {
        let config = bootstrap_config(opts.bootstrap, opts.seed, CiKind::Percentile, opts.ci_level);
        config.check()?;
        let curves: Vec<Option<Vec<f64>>> = parallel::map_indexed(opts.bootstrap, |b| {
            let eta = draw_multipliers(opts.seed, b, dataset.len());
            turnbull_weighted(dataset, Some(&eta), turnbull::DEFAULT_TOL, turnbull::DEFAULT_MAX_ITER)
                .ok()
                .map(|e| points.iter().map(|&t| e.survival(t)).collect())
        });
        let ok: Vec<&Vec<f64>> = curves.iter().flatten().collect();
        let failed = curves.len() - ok.len();
        if failed * 100 > crate::inference::MAX_FAILED_PCT * curves.len() {
            return Err(IcqrError::TooManyFailures {
                failed,
                total: curves.len(),
                limit_pct: crate::inference::MAX_FAILED_PCT,
            });
        }
        let alpha = 1.0 - opts.ci_level;
        Some(
            (0..points.len())
                .map(|j| {
                    let col: Vec<f64> = ok.iter().map(|c| c[j]).collect();
                    (order_statistic(&col, alpha / 2.0), order_statistic(&col, 1.0 - alpha / 2.0))
                })
                .collect::<Vec<_>>(),
        )
    } else {
        None
    };
    Ok(points
        .iter()
        .enumerate()
        .map(|(j, &t)| SurvivalRow {
            time: if opts.raw_times { t.exp() } else { t },
            survival: est.survival(t),
            lower: bands.as_ref().map(|b| b[j].0),
            upper: bands.as_ref().map(|b| b[j].1),
        })
        .collect())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

pub fn write_curve<W: Write>(writer: W, rows: &[CurveRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tau", "coefficient", "estimate", "lower", "upper"])?;
    for r in rows {
        w.write_record([
            format_value(r.tau),
            r.coefficient.clone(),
            format_value(r.estimate),
            opt_cell(r.lower),
            opt_cell(r.upper),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_survival<W: Write>(writer: W, rows: &[SurvivalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time", "survival", "lower", "upper"])?;
    for r in rows {
        w.write_record([format_value(r.time), format_value(r.survival), opt_cell(r.lower), opt_cell(r.upper)])?;
    }
    w.flush()?;
    Ok(())
}

/// Resolves `p0` (calibrating when asked) and runs the study.
pub fn run_simulate(config: &StudyConfig) -> Result<StudyReport> {
    let mut design = config.design.clone();
    if let (P0Setting::Calibrate(rate), crate::sim::Scheme::Pic) = (config.p0, design.scenario.scheme) {
        design.scenario.p0 =
            calibrate_p0(&design.scenario, rate, CALIBRATION_N).map_err(|e| e.in_stage("p0 calibration"))?;
    }
    run_study(&design).map_err(|e| e.in_stage("study"))
}

/// Short label such as `ev-m1-pic-n200-tau0.5`.
pub fn scenario_label(report: &StudyReport) -> String {
    let s = &report.scenario;
    let law = match s.error {
        crate::sim::ErrorLaw::ExtremeValue => "ev",
        crate::sim::ErrorLaw::Logistic => "logistic",
        crate::sim::ErrorLaw::ChiSquared3 => "chisq3",
    };
    let hetero = match s.hetero {
        crate::sim::Hetero::M1 => "m1",
        crate::sim::Hetero::M2 => "m2",
    };
    let scheme = match s.scheme {
        crate::sim::Scheme::Pic => "pic",
        crate::sim::Scheme::Ic => "ic",
    };
    format!("{law}-{hetero}-{scheme}-n{}-tau{}", s.n, s.tau.value())
}

/// One row per estimator and coefficient.
pub fn write_study_table<W: Write>(writer: W, report: &StudyReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "scenario", "p0", "censored", "replicates", "estimator", "coefficient", "bias", "ese", "bse", "cp",
        "mse", "re",
    ])?;
    let label = scenario_label(report);
    let p0 = match report.scenario.scheme {
        crate::sim::Scheme::Pic => format_value(report.scenario.p0),
        crate::sim::Scheme::Ic => String::new(),
    };
    for m in &report.metrics {
        for (k, c) in m.coefficients.iter().enumerate() {
            w.write_record([
                label.clone(),
                p0.clone(),
                format_value(report.censored_fraction),
                report.replicates.to_string(),
                m.estimator.name().to_string(),
                format!("beta{k}"),
                format_value(c.bias),
                format_value(c.ese),
                opt_cell(c.bse),
                opt_cell(c.cp),
                format_value(c.mse),
                format_value(m.re[k]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
