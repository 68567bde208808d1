//! Kernel-localized nonparametric maximum likelihood for `F(t | x)`.
//!
//! The cumulative hazard at a covariate point `x0` is modelled as a step
//! function on the grid of observed finite endpoints. Nadaraya-Watson weights
//! localize the interval-censored likelihood around `x0`, and the local
//! maximizer is found by an EM algorithm that treats each hazard jump as the
//! mean of a latent Poisson count. Both EM steps are closed form; one
//! iteration costs `O(n + m)` through prefix sums over the grid.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, Observation};
use crate::weighting::CdfProvider;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Kernel factor for a mismatch on a discrete covariate.
pub const DEFAULT_MISMATCH: f64 = 0.1;

/// Sorted, deduplicated finite endpoints `s_1 < ... < s_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportGrid {
    points: Vec<f64>,
}

impl SupportGrid {
    pub fn new(mut points: Vec<f64>) -> Result<Self> {
        points.retain(|v| v.is_finite());
        points.sort_by(f64::total_cmp);
        points.dedup();
        if points.is_empty() {
            return Err(IcqrError::EmptyGrid);
        }
        Ok(SupportGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of a grid point equal to `t`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points.binary_search_by(|p| p.total_cmp(&t)).ok()
    }

    /// Largest `j` with `s_j <= t`.
    pub fn floor_index(&self, t: f64) -> Option<usize> {
        let k = self.points.partition_point(|&p| p <= t);
        k.checked_sub(1)
    }
}

/// Finite event times and endpoints of the dataset.
pub fn support_grid(dataset: &Dataset) -> Result<SupportGrid> {
    SupportGrid::new(
        dataset
            .iter()
            .flat_map(|o| [o.left, o.right])
            .collect(),
    )
}

/// Hazard jumps on a support grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardIncrements {
    pub grid: Arc<SupportGrid>,
    pub d_lambda: Vec<f64>,
}

impl HazardIncrements {
    pub fn uniform(grid: Arc<SupportGrid>) -> Self {
        let m = grid.len();
        HazardIncrements {
            grid,
            d_lambda: vec![1.0 / m as f64; m],
        }
    }

    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.d_lambda
            .iter()
            .map(|d| {
                acc += d;
                acc
            })
            .collect()
    }
}

/// Kernel factor for one covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelComponent {
    /// Gaussian kernel with the given bandwidth.
    Gaussian { bandwidth: f64 },
    /// Weight 1 on an exact match, `mismatch` otherwise.
    Discrete { mismatch: f64 },
    /// Covariate does not enter the kernel.
    Ignore,
}

/// Product kernel over the covariates. Entry `k` applies to covariate `k`;
/// entry 0 (the intercept) is always `Ignore`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub components: Vec<KernelComponent>,
}

impl KernelSpec {
    /// A kernel that ignores every covariate: all subjects weigh `1/n`.
    pub fn uniform(p: usize) -> Self {
        KernelSpec {
            components: vec![KernelComponent::Ignore; p],
        }
    }

    /// Gaussian components with normal-scale bandwidths for continuous
    /// covariates and indicator components for discrete ones.
    pub fn auto(dataset: &Dataset) -> Result<Self> {
        let mut components = vec![KernelComponent::Ignore; dataset.p()];
        for (k, slot) in components.iter_mut().enumerate().skip(1) {
            *slot = if is_discrete(&dataset.column(k)) {
                KernelComponent::Discrete {
                    mismatch: DEFAULT_MISMATCH,
                }
            } else {
                KernelComponent::Gaussian {
                    bandwidth: silverman_bandwidth(dataset, k)?,
                }
            };
        }
        Ok(KernelSpec { components })
    }

    /// Like [`KernelSpec::auto`] but with every continuous bandwidth set to `h`.
    pub fn with_bandwidth(dataset: &Dataset, h: f64) -> Result<Self> {
        let mut components = vec![KernelComponent::Ignore; dataset.p()];
        for (k, slot) in components.iter_mut().enumerate().skip(1) {
            *slot = if is_discrete(&dataset.column(k)) {
                KernelComponent::Discrete {
                    mismatch: DEFAULT_MISMATCH,
                }
            } else {
                KernelComponent::Gaussian { bandwidth: h }
            };
        }
        let spec = KernelSpec { components };
        spec.check(dataset.p())?;
        Ok(spec)
    }

    /// Explicit bandwidths, one per non-intercept covariate, in order.
    /// Discrete covariates are detected from the data and keep the indicator kernel.
    pub fn with_bandwidths(dataset: &Dataset, bandwidths: &[f64]) -> Result<Self> {
        if bandwidths.len() + 1 != dataset.p() {
            return Err(IcqrError::InvalidArgument(format!(
                "expected {} bandwidths, got {}",
                dataset.p() - 1,
                bandwidths.len()
            )));
        }
        let mut components = vec![KernelComponent::Ignore; dataset.p()];
        for k in 1..dataset.p() {
            components[k] = if is_discrete(&dataset.column(k)) {
                KernelComponent::Discrete {
                    mismatch: DEFAULT_MISMATCH,
                }
            } else {
                KernelComponent::Gaussian {
                    bandwidth: bandwidths[k - 1],
                }
            };
        }
        let spec = KernelSpec { components };
        spec.check(dataset.p())?;
        Ok(spec)
    }

    pub fn check(&self, p: usize) -> Result<()> {
        if self.components.len() != p {
            return Err(IcqrError::InvalidArgument(format!(
                "kernel has {} components for {p} covariates",
                self.components.len()
            )));
        }
        for c in &self.components {
            match *c {
                KernelComponent::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                    return Err(IcqrError::Bandwidth(format!(
                        "bandwidth must be positive and finite, got {bandwidth}"
                    )))
                }
                KernelComponent::Discrete { mismatch } if !(0.0..=1.0).contains(&mismatch) => {
                    return Err(IcqrError::InvalidArgument(format!(
                        "mismatch factor must lie in [0, 1], got {mismatch}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn log_kernel(&self, x0: &[f64], xi: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            match *c {
                KernelComponent::Gaussian { bandwidth } => {
                    let u = (x0[k] - xi[k]) / bandwidth;
                    acc -= 0.5 * u * u;
                }
                KernelComponent::Discrete { mismatch } => {
                    if x0[k] != xi[k] {
                        acc += mismatch.ln();
                    }
                }
                KernelComponent::Ignore => {}
            }
        }
        acc
    }
}

/// Integer-valued with at most ten levels.
fn is_discrete(values: &[f64]) -> bool {
    if values.iter().any(|v| v.fract() != 0.0) {
        return false;
    }
    let mut levels: Vec<f64> = values.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels.len() <= 10
}

/// Normal-scale bandwidth `1.06 * min(sd, IQR / 1.349) * n^(-1/5)` for covariate `k`.
///
/// Falls back to the standard deviation when the IQR is zero.
pub fn silverman_bandwidth(dataset: &Dataset, k: usize) -> Result<f64> {
    if k >= dataset.p() {
        return Err(IcqrError::InvalidArgument(format!(
            "covariate index {k} out of range for p = {}",
            dataset.p()
        )));
    }
    let mut values = dataset.column(k);
    let n = values.len();
    if n < 2 {
        return Err(IcqrError::Bandwidth(
            "need at least two observations for a normal-scale bandwidth".into(),
        ));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(IcqrError::Bandwidth(format!(
            "covariate {k} has zero variance; supply a bandwidth explicitly"
        )));
    }
    values.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&values, 0.75) - quantile_sorted(&values, 0.25);
    let scale = if iqr > 0.0 { sd.min(iqr / 1.349) } else { sd };
    Ok(1.06 * scale * (n as f64).powf(-0.2))
}

/// Linear-interpolation sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Nadaraya-Watson weights at `x0`, normalized to sum to one.
pub fn nw_weights(x0: &[f64], dataset: &Dataset, spec: &KernelSpec) -> Result<Vec<f64>> {
    nw_weights_scaled(x0, dataset, spec, None)
}

/// Kernel weights with subject `i` additionally scaled by `multipliers[i]`
/// before normalization.
pub fn nw_weights_scaled(
    x0: &[f64],
    dataset: &Dataset,
    spec: &KernelSpec,
    multipliers: Option<&[f64]>,
) -> Result<Vec<f64>> {
    spec.check(dataset.p())?;
    if x0.len() != dataset.p() {
        return Err(IcqrError::InvalidArgument(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            dataset.p()
        )));
    }
    // Log space keeps the nearest subjects representable for tiny bandwidths.
    let logs: Vec<f64> = dataset
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let eta = multipliers.map_or(1.0, |m| m[i]);
            spec.log_kernel(x0, &o.covariates) + eta.ln()
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(IcqrError::Bandwidth(
            "all kernel weights vanish at x0; increase the bandwidth".into(),
        ));
    }
    let raw: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `T~_i`: the event time, the right endpoint, or the left endpoint of a
/// right-censored interval.
pub fn effective_time(obs: &Observation) -> Result<f64> {
    if obs.exact {
        Ok(obs.left)
    } else if obs.right.is_finite() {
        Ok(obs.right)
    } else if obs.left.is_finite() {
        Ok(obs.left)
    } else {
        Err(IcqrError::ContractViolation(
            "interval (-inf, inf) has no effective time".into(),
        ))
    }
}

/// Grid positions of one subject's record.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Layout {
    Exact { at: usize },
    /// `lo`/`hi` index the finite endpoints; `None` marks an infinite one.
    Censored { lo: Option<usize>, hi: Option<usize> },
}

impl Layout {
    /// Grid index of `T~_i`; `None` when no grid point lies at or below it.
    fn effective(self) -> Option<usize> {
        match self {
            Layout::Exact { at } => Some(at),
            Layout::Censored { hi: Some(h), .. } => Some(h),
            Layout::Censored { lo, hi: None } => lo,
        }
    }

    /// First grid index strictly above the left endpoint.
    fn interval_start(lo: Option<usize>) -> usize {
        lo.map_or(0, |l| l + 1)
    }
}

/// Convergence controls for the EM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Record the weighted log-likelihood after every iterate.
    pub trace: bool,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            trace: false,
        }
    }
}

/// Final state of one EM run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmState {
    pub increments: HazardIncrements,
    pub iteration: usize,
    /// Max-norm change of the cumulative hazard in the last iteration.
    pub delta_norm: f64,
    pub converged: bool,
    /// Grid points with no weighted subject at risk; their jumps are fixed at 0.
    pub dropped_points: usize,
    /// Log-likelihood of the initial value and of each iterate, when requested.
    pub trace: Vec<f64>,
}

/// A dataset laid out on its support grid, ready for repeated EM runs at
/// different covariate points.
#[derive(Debug, Clone)]
pub struct EmProblem {
    grid: Arc<SupportGrid>,
    layout: Vec<Layout>,
}

impl EmProblem {
    /// Problem on the full grid of finite endpoints.
    pub fn new(dataset: &Dataset) -> Result<Self> {
        Self::with_grid(dataset, support_grid(dataset)?)
    }

    /// Problem on a caller-chosen grid. Every exact time must be a grid
    /// point and every bounded interval must contain one.
    pub fn with_grid(dataset: &Dataset, grid: SupportGrid) -> Result<Self> {
        let grid = Arc::new(grid);
        let floor = |t: f64| -> Option<usize> {
            if t == f64::NEG_INFINITY {
                None
            } else {
                grid.floor_index(t)
            }
        };
        let layout = dataset
            .iter()
            .enumerate()
            .map(|(i, o)| {
                effective_time(o)?;
                if o.exact {
                    let at = grid.index_of(o.left).ok_or_else(|| {
                        IcqrError::InvalidArgument(format!("exact time of subject {i} is not on the grid"))
                    })?;
                    return Ok(Layout::Exact { at });
                }
                let lo = floor(o.left);
                let hi = if o.right.is_finite() { floor(o.right) } else { None };
                if o.right.is_finite() && hi.is_none_or(|h| Some(h) == lo) {
                    return Err(IcqrError::InvalidArgument(format!(
                        "interval of subject {i} contains no grid point"
                    )));
                }
                Ok(Layout::Censored { lo, hi })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmProblem { grid, layout })
    }

    pub fn grid(&self) -> &Arc<SupportGrid> {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.layout.len()
    }

    /// Conditional expectations `xi_i1..xi_im` of the latent counts of
    /// subject `i` under the current increments.
    ///
    /// For a right-censored subject the event is certain to occur somewhere
    /// above `L`, so its latent counts there keep their prior means.
    pub fn e_step(&self, i: usize, increments: &HazardIncrements) -> Result<Vec<f64>> {
        let m = self.grid.len();
        let dl = &increments.d_lambda;
        let layout = *self.layout.get(i).ok_or_else(|| {
            IcqrError::InvalidArgument(format!("subject {i} out of range"))
        })?;
        let mut xi = vec![0.0; m];
        let first_after = layout.effective().map_or(0, |t| t + 1);
        if first_after < m {
            xi[first_after..].copy_from_slice(&dl[first_after..m]);
        }
        match layout {
            Layout::Exact { at } => xi[at] = 1.0,
            Layout::Censored { lo, hi: Some(hi) } => {
                let start = Layout::interval_start(lo);
                let mass: f64 = dl[start..=hi].iter().sum();
                if mass > 0.0 {
                    let denom = -(-mass).exp_m1();
                    for j in start..=hi {
                        xi[j] = dl[j] / denom;
                    }
                } else {
                    let v = reinit_xi(hi + 1 - start, m);
                    xi[start..=hi].iter_mut().for_each(|x| *x = v);
                }
            }
            Layout::Censored { hi: None, .. } => {}
        }
        Ok(xi)
    }

    /// Closed-form update `sum_i B_i xi_ij I(s_j <= T~_i) / sum_i B_i I(s_j <= T~_i)`.
    ///
    /// Returns the new increments and the number of grid points whose
    /// denominator vanished (their jump is set to 0).
    pub fn m_step(&self, xi: &[Vec<f64>], b: &[f64]) -> Result<(HazardIncrements, usize)> {
        let m = self.grid.len();
        if xi.len() != self.n() || b.len() != self.n() {
            return Err(IcqrError::InvalidArgument(
                "xi and weight vectors must have one entry per subject".into(),
            ));
        }
        let mut num = vec![0.0; m];
        let mut den = vec![0.0; m];
        for ((layout, xi_i), &bi) in self.layout.iter().zip(xi).zip(b) {
            let Some(tt) = layout.effective() else {
                continue;
            };
            for j in 0..=tt {
                num[j] += bi * xi_i[j];
                den[j] += bi;
            }
        }
        let mut dropped = 0;
        let d_lambda = num
            .iter()
            .zip(&den)
            .map(|(&n, &d)| {
                if d > 0.0 {
                    n / d
                } else {
                    dropped += 1;
                    0.0
                }
            })
            .collect();
        Ok((
            HazardIncrements {
                grid: Arc::clone(&self.grid),
                d_lambda,
            },
            dropped,
        ))
    }

    /// Kernel-weighted observed-data log-likelihood of the increments.
    pub fn log_likelihood(&self, b: &[f64], increments: &HazardIncrements) -> f64 {
        let cum = increments.cumulative();
        let dl = &increments.d_lambda;
        let at = |k: Option<usize>| k.map_or(0.0, |k| cum[k]);
        let mut total = 0.0;
        for (layout, &bi) in self.layout.iter().zip(b) {
            if bi == 0.0 {
                continue;
            }
            let term = match *layout {
                Layout::Exact { at: j } => dl[j].ln() - cum[j],
                Layout::Censored { lo, hi: Some(hi) } => {
                    let mass = interval_mass(dl, &cum, Layout::interval_start(lo), hi);
                    -at(lo) + (-(-mass).exp_m1()).ln()
                }
                Layout::Censored { lo, hi: None } => -at(lo),
            };
            total += bi * term;
        }
        total / self.n() as f64
    }

    /// Runs the EM with subject weights `b` (need not be normalized).
    pub fn run(&self, b: &[f64], opts: EmOptions) -> Result<EmState> {
        let n = self.n();
        let m = self.grid.len();
        if b.len() != n {
            return Err(IcqrError::InvalidArgument(format!(
                "expected {n} subject weights, got {}",
                b.len()
            )));
        }
        if opts.max_iter == 0 || !(opts.tol > 0.0) {
            return Err(IcqrError::InvalidArgument(
                "EM needs max_iter >= 1 and tol > 0".into(),
            ));
        }

        // Parts of the M-step that do not change between iterations.
        let mut exact_num = vec![0.0; m];
        let mut at_risk = vec![0.0; m + 1];
        let mut intervals: Vec<(usize, usize, f64)> = Vec::new();
        for (layout, &bi) in self.layout.iter().zip(b) {
            if bi == 0.0 {
                continue;
            }
            let Some(tt) = layout.effective() else {
                continue;
            };
            at_risk[tt] += bi;
            match *layout {
                Layout::Exact { at } => exact_num[at] += bi,
                Layout::Censored { lo, hi: Some(hi) } => {
                    intervals.push((Layout::interval_start(lo), hi, bi));
                }
                Layout::Censored { hi: None, .. } => {}
            }
        }
        for j in (0..m).rev() {
            at_risk[j] += at_risk[j + 1];
        }
        at_risk.truncate(m);
        let dropped_points = at_risk.iter().filter(|&&d| !(d > 0.0)).count();

        let mut inc = HazardIncrements::uniform(Arc::clone(&self.grid));
        let mut cum = inc.cumulative();
        let mut trace = Vec::new();
        if opts.trace {
            trace.push(self.log_likelihood(b, &inc));
        }
        let mut scaled = vec![0.0; m + 1];
        let mut flat = vec![0.0; m + 1];
        let mut next = vec![0.0; m];
        let mut iteration = 0;
        let mut delta_norm = f64::INFINITY;
        let mut converged = false;

        while iteration < opts.max_iter {
            iteration += 1;
            scaled.iter_mut().for_each(|v| *v = 0.0);
            flat.iter_mut().for_each(|v| *v = 0.0);
            for &(start, hi, bi) in &intervals {
                let mass = interval_mass(&inc.d_lambda, &cum, start, hi);
                if mass > 0.0 {
                    let c = bi / -(-mass).exp_m1();
                    scaled[start] += c;
                    scaled[hi + 1] -= c;
                } else {
                    let v = reinit_xi(hi + 1 - start, m);
                    flat[start] += bi * v;
                    flat[hi + 1] -= bi * v;
                }
            }
            let mut run_scaled = 0.0;
            let mut run_flat = 0.0;
            for j in 0..m {
                run_scaled += scaled[j];
                run_flat += flat[j];
                next[j] = if at_risk[j] > 0.0 {
                    (exact_num[j] + inc.d_lambda[j] * run_scaled + run_flat) / at_risk[j]
                } else {
                    0.0
                };
            }
            let mut acc = 0.0;
            delta_norm = 0.0;
            for j in 0..m {
                acc += next[j];
                delta_norm = f64::max(delta_norm, (acc - cum[j]).abs());
                cum[j] = acc;
            }
            std::mem::swap(&mut inc.d_lambda, &mut next);
            if opts.trace {
                trace.push(self.log_likelihood(b, &inc));
            }
            if delta_norm <= opts.tol {
                converged = true;
                break;
            }
        }

        Ok(EmState {
            increments: inc,
            iteration,
            delta_norm,
            converged,
            dropped_points,
            trace,
        })
    }

    /// Local estimate of `F(. | x0)`.
    pub fn fit_at(
        &self,
        x0: &[f64],
        dataset: &Dataset,
        spec: &KernelSpec,
        multipliers: Option<&[f64]>,
        opts: EmOptions,
    ) -> Result<ConditionalCdf> {
        let b = nw_weights_scaled(x0, dataset, spec, multipliers)?;
        let state = self.run(&b, opts)?;
        Ok(ConditionalCdf::from_state(&state, HazardLink::Exponential))
    }
}

/// Hazard mass on grid points `start..=hi`. The difference of cumulative
/// sums loses everything below the rounding of `cum[hi]`, so small masses
/// are summed directly.
fn interval_mass(d_lambda: &[f64], cum: &[f64], start: usize, hi: usize) -> f64 {
    let base = if start == 0 { 0.0 } else { cum[start - 1] };
    let diff = cum[hi] - base;
    if diff > 1e-6 * cum[hi] {
        diff
    } else {
        d_lambda[start..=hi].iter().sum()
    }
}

/// Latent-count expectation when an interval of `k` points carries no mass:
/// the increments are taken as `1/m` for this subject.
fn reinit_xi(k: usize, m: usize) -> f64 {
    let d = 1.0 / m as f64;
    d / -(-(k as f64 * d)).exp_m1()
}

/// Map from cumulative hazard to distribution function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HazardLink {
    /// `F = 1 - exp(-Lambda)`.
    Exponential,
    /// `F = 1 - prod_j (1 - dLambda_j)`, the product-limit form.
    ProductIntegral,
}

/// Right-continuous step estimate of `F(t | x0)` on a support grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCdf {
    grid: Arc<SupportGrid>,
    values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub dropped_points: usize,
}

impl ConditionalCdf {
    pub fn from_state(state: &EmState, link: HazardLink) -> Self {
        let inc = &state.increments;
        let values = match link {
            HazardLink::Exponential => inc
                .cumulative()
                .into_iter()
                .map(|c| -(-c).exp_m1())
                .collect(),
            HazardLink::ProductIntegral => {
                let mut surv = 1.0;
                inc.d_lambda
                    .iter()
                    .map(|d| {
                        surv *= (1.0 - d).max(0.0);
                        1.0 - surv
                    })
                    .collect()
            }
        };
        ConditionalCdf {
            grid: Arc::clone(&inc.grid),
            values,
            iterations: state.iteration,
            converged: state.converged,
            dropped_points: state.dropped_points,
        }
    }

    pub fn grid(&self) -> &SupportGrid {
        &self.grid
    }

    /// `F` at each grid point.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluates the step function; 0 below the grid, `F(s_m)` above it for
    /// finite `t`, and 1 at `+inf`.
    pub fn eval(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return 1.0;
        }
        match self.grid.floor_index(t) {
            Some(j) => self.values[j],
            None => 0.0,
        }
    }
}

impl CdfProvider for ConditionalCdf {
    fn cdf(&self, t: f64, _x: &[f64]) -> Result<f64> {
        Ok(self.eval(t))
    }
}

/// Kernel EM estimate of `F(. | x0)` with the default link.
pub fn fit_local_cdf(
    x0: &[f64],
    dataset: &Dataset,
    spec: &KernelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<ConditionalCdf> {
    let problem = EmProblem::new(dataset)?;
    problem.fit_at(
        x0,
        dataset,
        spec,
        None,
        EmOptions {
            tol,
            max_iter,
            trace: false,
        },
    )
}

/// Evaluates the kernel EM estimate on demand for any covariate point.
///
/// Each call runs a fresh EM; the pipeline caches per-subject curves instead.
pub struct LocalNpmle<'a> {
    dataset: &'a Dataset,
    problem: EmProblem,
    spec: KernelSpec,
    opts: EmOptions,
}

impl<'a> LocalNpmle<'a> {
    pub fn new(dataset: &'a Dataset, spec: KernelSpec, opts: EmOptions) -> Result<Self> {
        spec.check(dataset.p())?;
        Ok(LocalNpmle {
            dataset,
            problem: EmProblem::new(dataset)?,
            spec,
            opts,
        })
    }

    pub fn curve(&self, x0: &[f64]) -> Result<ConditionalCdf> {
        self.problem
            .fit_at(x0, self.dataset, &self.spec, None, self.opts)
    }
}

impl CdfProvider for LocalNpmle<'_> {
    fn cdf(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.curve(x)?.eval(t))
    }

    fn endpoint_cdfs(&self, _index: usize, obs: &Observation) -> Result<(f64, f64)> {
        let curve = self.curve(&obs.covariates)?;
        Ok((curve.eval(obs.left), curve.eval(obs.right)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(rows: Vec<Observation>) -> Dataset {
        Dataset::new(rows).unwrap()
    }

    fn one() -> Vec<f64> {
        vec![1.0]
    }

    #[test]
    fn grid_examples() {
        let g = support_grid(&ds(vec![
            Observation::exact(2.0, one()),
            Observation::exact(1.0, one()),
            Observation::exact(2.0, one()),
        ]))
        .unwrap();
        assert_eq!(g.points(), &[1.0, 2.0]);

        let g = support_grid(&ds(vec![
            Observation::censored(0.5, 2.0, one()),
            Observation::exact(1.0, one()),
        ]))
        .unwrap();
        assert_eq!(g.points(), &[0.5, 1.0, 2.0]);

        let g = support_grid(&ds(vec![Observation::censored(
            f64::NEG_INFINITY,
            1.3,
            one(),
        )]))
        .unwrap();
        assert_eq!(g.points(), &[1.3]);
        assert!(SupportGrid::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn effective_time_examples() {
        assert_eq!(effective_time(&Observation::exact(1.5, one())).unwrap(), 1.5);
        assert_eq!(
            effective_time(&Observation::censored(0.5, 2.0, one())).unwrap(),
            2.0
        );
        assert_eq!(
            effective_time(&Observation::censored(0.7, f64::INFINITY, one())).unwrap(),
            0.7
        );
        assert!(effective_time(&Observation::censored(
            f64::NEG_INFINITY,
            f64::INFINITY,
            one()
        ))
        .is_err());
    }

    #[test]
    fn nw_weight_examples() {
        let x = |v: f64| vec![1.0, v];
        let d = ds(vec![
            Observation::exact(1.0, x(0.3)),
            Observation::exact(2.0, x(0.3)),
            Observation::exact(3.0, x(0.3)),
        ]);
        let spec = KernelSpec {
            components: vec![KernelComponent::Ignore, KernelComponent::Gaussian { bandwidth: 0.2 }],
        };
        let b = nw_weights(&x(0.3), &d, &spec).unwrap();
        assert!(b.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));

        let h = 0.2;
        let d = ds(vec![
            Observation::exact(1.0, x(0.0)),
            Observation::exact(2.0, x(10.0 * h)),
        ]);
        let b = nw_weights(&x(0.0), &d, &spec).unwrap();
        // exp(-50) relative weight.
        assert!((b[0] - 1.0).abs() < 1e-8 && b[1] < 1e-8);
        assert!((b[1] - (-50.0f64).exp() / (1.0 + (-50.0f64).exp())).abs() < 1e-30);
    }

    #[test]
    fn nw_weights_survive_tiny_bandwidths() {
        let x = |v: f64| vec![1.0, v];
        let d = ds(vec![
            Observation::exact(1.0, x(0.0)),
            Observation::exact(2.0, x(1.0)),
        ]);
        let spec = KernelSpec {
            components: vec![KernelComponent::Ignore, KernelComponent::Gaussian { bandwidth: 1e-3 }],
        };
        let b = nw_weights(&x(0.5), &d, &spec).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-12);
        let bad = KernelSpec {
            components: vec![KernelComponent::Ignore, KernelComponent::Gaussian { bandwidth: 0.0 }],
        };
        assert!(nw_weights(&x(0.5), &d, &bad).is_err());
    }

    #[test]
    fn silverman_examples() {
        // Unit-sd covariate with IQR/1.349 above 1: the sd is the scale.
        let n = 200;
        let vals: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -1.0 } else { 1.0 }).collect();
        let mean = 0.0;
        let sd = (vals.iter().map(|v: &f64| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let d = ds(vals
            .iter()
            .map(|&v| Observation::exact(0.0, vec![1.0, v / sd]))
            .collect());
        let h = silverman_bandwidth(&d, 1).unwrap();
        assert!((h - 1.06 * (n as f64).powf(-0.2)).abs() < 1e-12, "{h}");
        assert!((h - 0.3672).abs() < 5e-4);

        let scaled = ds(vals
            .iter()
            .map(|&v| Observation::exact(0.0, vec![1.0, 3.0 * v / sd]))
            .collect());
        assert!((silverman_bandwidth(&scaled, 1).unwrap() - 3.0 * h).abs() < 1e-12);

        let single = ds(vec![Observation::exact(0.0, vec![1.0, 0.5])]);
        assert!(silverman_bandwidth(&single, 1).is_err());
        let flat = ds(vec![
            Observation::exact(0.0, vec![1.0, 0.5]),
            Observation::exact(1.0, vec![1.0, 0.5]),
        ]);
        assert!(silverman_bandwidth(&flat, 1).is_err());
    }

    #[test]
    fn e_step_examples() {
        let d = ds(vec![
            Observation::exact(1.0, one()),
            Observation::exact(2.0, one()),
            Observation::exact(3.0, one()),
        ]);
        let problem = EmProblem::new(&d).unwrap();
        let inc = HazardIncrements {
            grid: Arc::clone(problem.grid()),
            d_lambda: vec![0.2, 0.3, 0.4],
        };
        let xi = problem.e_step(1, &inc).unwrap();
        assert_eq!(xi, vec![0.0, 1.0, 0.4]);

        // Interval with a single interior point carrying dLambda = 0.3.
        let d = ds(vec![
            Observation::exact(0.5, one()),
            Observation::censored(0.5, 2.0, one()),
            Observation::exact(3.0, one()),
        ]);
        let problem = EmProblem::new(&d).unwrap();
        let inc = HazardIncrements {
            grid: Arc::clone(problem.grid()),
            d_lambda: vec![0.1, 0.3, 0.25],
        };
        let xi = problem.e_step(1, &inc).unwrap();
        let expected = 0.3 / (1.0 - (-0.3f64).exp());
        assert!((xi[1] - expected).abs() < 1e-14);
        assert!((expected - 1.15749).abs() < 1e-5);
        assert_eq!(xi[0], 0.0);
        assert_eq!(xi[2], 0.25);
    }

    #[test]
    fn m_step_hand_example() {
        let d = ds(vec![
            Observation::exact(1.0, one()),
            Observation::censored(1.0, f64::INFINITY, one()),
        ]);
        let problem = EmProblem::new(&d).unwrap();
        let inc = HazardIncrements::uniform(Arc::clone(problem.grid()));
        let xi: Vec<_> = (0..2).map(|i| problem.e_step(i, &inc).unwrap()).collect();
        let (next, dropped) = problem.m_step(&xi, &[0.5, 0.5]).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(next.d_lambda, vec![0.5]);
        let (scaled, _) = problem.m_step(&xi, &[5.0, 5.0]).unwrap();
        assert_eq!(scaled.d_lambda, next.d_lambda);
    }

    #[test]
    fn single_exact_point_fixed_point() {
        let d = ds(vec![Observation::exact(1.0, one())]);
        let cdf = fit_local_cdf(&one(), &d, &KernelSpec::uniform(1), 1e-5, 100).unwrap();
        assert_eq!(cdf.eval(0.5), 0.0);
        assert!((cdf.eval(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((cdf.eval(1.0) - 0.6321).abs() < 1e-4);
        assert_eq!(cdf.eval(f64::INFINITY), 1.0);
        assert!(cdf.converged);
    }

    #[test]
    fn fast_iteration_matches_reference_steps() {
        let x = |v: f64| vec![1.0, v];
        let d = ds(vec![
            Observation::exact(0.2, x(0.1)),
            Observation::censored(0.1, 0.9, x(0.4)),
            Observation::censored(f64::NEG_INFINITY, 0.5, x(-0.3)),
            Observation::censored(0.6, f64::INFINITY, x(0.8)),
            Observation::censored(0.3, 1.4, x(0.0)),
            Observation::exact(1.1, x(-0.5)),
        ]);
        let problem = EmProblem::new(&d).unwrap();
        let spec = KernelSpec {
            components: vec![KernelComponent::Ignore, KernelComponent::Gaussian { bandwidth: 0.5 }],
        };
        let b = nw_weights(&x(0.2), &d, &spec).unwrap();
        let mut inc = HazardIncrements::uniform(Arc::clone(problem.grid()));
        for k in 1..=7 {
            let xi: Vec<_> = (0..d.len()).map(|i| problem.e_step(i, &inc).unwrap()).collect();
            inc = problem.m_step(&xi, &b).unwrap().0;
            let fast = problem
                .run(&b, EmOptions { tol: 1e-300, max_iter: k, trace: false })
                .unwrap();
            for (a, r) in fast.increments.d_lambda.iter().zip(&inc.d_lambda) {
                assert!((a - r).abs() <= 1e-13 * r.abs().max(1.0), "iteration {k}: {a} vs {r}");
            }
        }
    }

    #[test]
    fn tiny_interval_mass_survives_large_cumulative_hazard() {
        // An interval holding ~1e-17 of hazard on top of a cumulative near 1.
        let d_lambda = vec![0.9, 6e-17, 5e-19, 0.2];
        let cum: Vec<f64> = d_lambda
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();
        assert!(((cum[2] - cum[0]) / 6.05e-17 - 1.0).abs() > 0.5);
        assert!((interval_mass(&d_lambda, &cum, 1, 2) - 6.05e-17).abs() < 1e-30);
        assert_eq!(interval_mass(&d_lambda, &cum, 1, 3), cum[3] - cum[0]);
    }

    #[test]
    fn nelson_aalen_on_exact_data() {
        let times = [0.3, 1.2, 0.7, 1.2, 2.5, 0.7, 0.7, 3.1];
        let d = ds(times.iter().map(|&t| Observation::exact(t, one())).collect());
        let problem = EmProblem::new(&d).unwrap();
        let b = vec![1.0 / times.len() as f64; times.len()];
        let state = problem.run(&b, EmOptions::default()).unwrap();
        // Direct Nelson-Aalen: d_j / Y_j.
        for (j, &s) in problem.grid().points().iter().enumerate() {
            let deaths = times.iter().filter(|&&t| t == s).count() as f64;
            let at_risk = times.iter().filter(|&&t| t >= s).count() as f64;
            assert!((state.increments.d_lambda[j] - deaths / at_risk).abs() < 1e-15);
        }
        assert!(state.converged);
    }
}
