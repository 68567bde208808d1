//! Monte Carlo data generation for partly interval-censored (PIC) and fully
//! interval-censored (IC) designs, plus study orchestration in [`study`].
//!
//! Subjects follow `T = b0 + b1 x1 + b2 x2 + sigma(x) e` on the log-time
//! scale, with `x1 ~ U(-1, 1)`, `x2 ~ Bernoulli(0.5)` and `e` centred so its
//! `tau`-quantile is zero. Inspections form a renewal chain on the raw time
//! scale with `U(0.1, 1)` gaps up to a `U(30, 50)` censoring time.

pub mod study;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, Observation, QuantileLevel};
use crate::parallel;
use crate::stats::chi3_quantile;

pub use study::{
    bandwidth_sweep, censoring_sweep, coefficient_metrics, run_study, CoefMetrics, Estimator,
    StudyDesign, StudyMetrics, StudyReport, SweepRow,
};

/// Pilot sample size used to calibrate `p0`.
pub const CALIBRATION_N: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorLaw {
    /// Minimum-type extreme value, location -1, scale 1.
    ExtremeValue,
    /// Logistic, location -2, scale 1.
    Logistic,
    /// Chi-squared with 3 degrees of freedom.
    ChiSquared3,
}

/// An error distribution with its location and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueError {
    pub law: ErrorLaw,
    pub loc: f64,
    pub scale: f64,
}

impl TrueError {
    pub fn standard(law: ErrorLaw) -> Self {
        let (loc, scale) = match law {
            ErrorLaw::ExtremeValue => (-1.0, 1.0),
            ErrorLaw::Logistic => (-2.0, 1.0),
            ErrorLaw::ChiSquared3 => (0.0, 1.0),
        };
        TrueError { law, loc, scale }
    }

    pub fn quantile(&self, u: f64) -> Result<f64> {
        error_quantile(self, u)
    }
}

/// Exact quantile function of the error law.
pub fn error_quantile(law: &TrueError, u: f64) -> Result<f64> {
    if !(u > 0.0 && u < 1.0) {
        return Err(IcqrError::InvalidArgument(format!(
            "quantile level must lie in (0, 1), got {u}"
        )));
    }
    let z = match law.law {
        ErrorLaw::ExtremeValue => (-(-u).ln_1p()).ln(),
        ErrorLaw::Logistic => (u / (1.0 - u)).ln(),
        ErrorLaw::ChiSquared3 => chi3_quantile(u),
    };
    Ok(law.loc + law.scale * z)
}

/// Scale function of the error term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hetero {
    /// `sigma(x) = 1 + 0.3 (1 - x1)^2`.
    M1,
    /// `sigma(x) = 1 + 0.5 (1 - x1)^2`.
    M2,
}

impl Hetero {
    pub fn sigma(self, x1: f64) -> f64 {
        let c = match self {
            Hetero::M1 => 0.3,
            Hetero::M2 => 0.5,
        };
        1.0 + c * (1.0 - x1) * (1.0 - x1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    /// Exact times observed with probability `p0 - 0.1 x2` when before censoring.
    Pic,
    /// Every subject interval-censored.
    Ic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub tau: QuantileLevel,
    pub error: ErrorLaw,
    pub hetero: Hetero,
    pub scheme: Scheme,
    pub p0: f64,
    pub beta0: [f64; 3],
    pub seed: u64,
}

impl SimScenario {
    pub fn new(n: usize, tau: QuantileLevel, error: ErrorLaw, hetero: Hetero, scheme: Scheme) -> Self {
        SimScenario {
            n,
            tau,
            error,
            hetero,
            scheme,
            p0: 0.5,
            beta0: [1.5, 1.0, 1.0],
            seed: 0,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.n < 10 {
            return Err(IcqrError::InvalidArgument(format!(
                "simulation needs n >= 10, got {}",
                self.n
            )));
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(IcqrError::InvalidArgument(format!(
                "p0 must lie in (0, 1), got {}",
                self.p0
            )));
        }
        Ok(())
    }

    /// True conditional `tau`-quantile coefficients.
    pub fn true_beta(&self) -> Vec<f64> {
        self.beta0.to_vec()
    }
}

/// A generated dataset with the latent event times kept for checking.
#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub dataset: Dataset,
    pub true_times: Vec<f64>,
}

/// Everything drawn for one subject before the observation rule is applied.
#[derive(Debug, Clone, Copy)]
struct Draw {
    x1: f64,
    x2: f64,
    t: f64,
    log_c: f64,
    u_delta: f64,
    /// Log inspection times bracketing `t`; infinite outside the chain.
    left: f64,
    right: f64,
}

impl Draw {
    fn exact_probability(&self, p0: f64) -> f64 {
        (p0 - 0.1 * self.x2).clamp(0.0, 1.0)
    }

    fn is_exact(&self, scheme: Scheme, p0: f64) -> bool {
        scheme == Scheme::Pic && self.u_delta < self.exact_probability(p0) && self.t < self.log_c
    }

    fn observe(&self, scheme: Scheme, p0: f64) -> Observation {
        let x = vec![1.0, self.x1, self.x2];
        if self.is_exact(scheme, p0) {
            Observation::exact(self.t, x)
        } else {
            Observation::censored(self.left, self.right, x)
        }
    }
}

fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

fn draw_subject(rng: &mut ChaCha8Rng, law: &TrueError, shift: f64, hetero: Hetero, beta: &[f64; 3]) -> Result<Draw> {
    let x1 = rng.random_range(-1.0..1.0);
    let x2 = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
    let e = law.quantile(open_unit(rng))? - shift;
    let t = beta[0] + beta[1] * x1 + beta[2] * x2 + hetero.sigma(x1) * e;
    let c = rng.random_range(30.0..50.0);
    let u_delta: f64 = rng.random();

    let raw_t = t.exp();
    let mut left = f64::NEG_INFINITY;
    let mut right = f64::INFINITY;
    let mut visit = 0.0;
    loop {
        visit += rng.random_range(0.1..1.0);
        if visit > c {
            break;
        }
        if visit < raw_t {
            left = visit.ln();
        } else if right == f64::INFINITY {
            right = visit.ln();
        }
    }
    Ok(Draw {
        x1,
        x2,
        t,
        log_c: c.ln(),
        u_delta,
        left,
        right,
    })
}

fn draw_all(scenario: &SimScenario, n: usize) -> Result<Vec<Draw>> {
    let law = TrueError::standard(scenario.error);
    let shift = law.quantile(scenario.tau.value())?;
    let mut rng = parallel::stream_rng(scenario.seed, 0);
    (0..n)
        .map(|_| draw_subject(&mut rng, &law, shift, scenario.hetero, &scenario.beta0))
        .collect()
}

/// Draws one dataset; bit-reproducible for a given scenario.
pub fn generate(scenario: &SimScenario) -> Result<SimData> {
    scenario.check()?;
    let draws = draw_all(scenario, scenario.n)?;
    let observations = draws
        .iter()
        .map(|d| d.observe(scenario.scheme, scenario.p0))
        .collect();
    Ok(SimData {
        dataset: Dataset::new(observations)?,
        true_times: draws.iter().map(|d| d.t).collect(),
    })
}

/// Censored fraction of the pilot sample at each candidate `p0`.
struct Pilot {
    draws: Vec<Draw>,
    scheme: Scheme,
}

impl Pilot {
    fn censored_fraction(&self, p0: f64) -> f64 {
        let exact = self.draws.iter().filter(|d| d.is_exact(self.scheme, p0)).count();
        1.0 - exact as f64 / self.draws.len() as f64
    }
}

/// Expected censored fraction under `scenario`, estimated from `pilot_n` draws.
pub fn censoring_rate(scenario: &SimScenario, pilot_n: usize) -> Result<f64> {
    let pilot = Pilot {
        draws: draw_all(scenario, pilot_n)?,
        scheme: scenario.scheme,
    };
    Ok(pilot.censored_fraction(scenario.p0))
}

/// `p0` giving censored fraction `target` on a pilot sample of size
/// `pilot_n`, found by bisection with the same random numbers at every step.
pub fn calibrate_p0(scenario: &SimScenario, target: f64, pilot_n: usize) -> Result<f64> {
    if scenario.scheme == Scheme::Ic {
        return Err(IcqrError::InvalidArgument(
            "p0 has no effect under the fully interval-censored scheme".into(),
        ));
    }
    let pilot = Pilot {
        draws: draw_all(scenario, pilot_n.max(1))?,
        scheme: scenario.scheme,
    };
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    let (max_rate, min_rate) = (pilot.censored_fraction(lo), pilot.censored_fraction(hi));
    if !(target >= min_rate && target <= max_rate) {
        return Err(IcqrError::InvalidArgument(format!(
            "censoring rate {target} is not reachable; attainable range is [{min_rate:.3}, {max_rate:.3}]"
        )));
    }
    // The censored fraction decreases in p0.
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pilot.censored_fraction(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
