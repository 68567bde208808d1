//! Exact minimization of the weighted quantile check loss.
//!
//! The problem `min_b sum_i w_i rho_tau(t_i - x_i'b)` is solved through its
//! dual linear program
//!
//! ```text
//! max  sum_i t_i a_i   s.t.  sum_i a_i x_i = 0,   (tau - 1) w_i <= a_i <= tau w_i
//! ```
//!
//! with a dense bounded-variable primal simplex. Only `p` variables are basic,
//! so each iteration costs `O(N p)` for `N` rows. The simplex multipliers of
//! the final basis are the coefficients; the fitted hyperplane passes through
//! the `p` basic rows, which makes the answer a vertex of the primal problem.

use crate::error::{IcqrError, Result};
use crate::model::{QuantileFit, QuantileLevel};
use crate::weighting::AugmentedRow;

/// Rows with weight below this are left out of the linear program.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// Iterations without objective progress before switching to Bland's rule.
const STALL_LIMIT: usize = 50;

/// `u (tau - I(u <= 0))`.
pub fn check_loss(u: f64, tau: QuantileLevel) -> f64 {
    let tau = tau.value();
    if u > 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLossProblem {
    rows: Vec<AugmentedRow>,
    tau: QuantileLevel,
    p: usize,
}

impl CheckLossProblem {
    pub fn new(rows: Vec<AugmentedRow>, tau: QuantileLevel) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.covariates.len());
        if p == 0 {
            return Err(IcqrError::InvalidArgument(
                "check-loss problem needs at least one row with covariates".into(),
            ));
        }
        for (i, r) in rows.iter().enumerate() {
            if !r.t.is_finite() {
                return Err(IcqrError::InvalidArgument(format!(
                    "row {i} has non-finite response {}",
                    r.t
                )));
            }
            if !(r.weight >= 0.0) || !r.weight.is_finite() {
                return Err(IcqrError::InvalidArgument(format!(
                    "row {i} has invalid weight {}",
                    r.weight
                )));
            }
            if r.covariates.len() != p || r.covariates.iter().any(|v| !v.is_finite()) {
                return Err(IcqrError::InvalidArgument(format!(
                    "row {i} has a malformed covariate vector"
                )));
            }
        }
        Ok(CheckLossProblem { rows, tau, p })
    }

    pub fn rows(&self) -> &[AugmentedRow] {
        &self.rows
    }

    pub fn tau(&self) -> QuantileLevel {
        self.tau
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of distinct source subjects behind the rows.
    pub fn n_subjects(&self) -> usize {
        let mut origins: Vec<usize> = self.rows.iter().map(|r| r.origin).collect();
        origins.sort_unstable();
        origins.dedup();
        origins.len()
    }

    /// Weighted check loss of `beta` summed over rows.
    pub fn objective(&self, beta: &[f64]) -> f64 {
        let terms: Vec<f64> = self
            .rows
            .iter()
            .map(|r| r.weight * check_loss(r.t - dot(&r.covariates, beta), self.tau))
            .collect();
        crate::stats::pairwise_sum(&terms)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `n^-1 sum_rows w x (tau - I(t - x'beta <= 0))`, with `n` the number of subjects.
pub fn subgradient(problem: &CheckLossProblem, beta: &[f64]) -> Vec<f64> {
    let tau = problem.tau.value();
    let n = problem.n_subjects().max(1) as f64;
    let mut g = vec![0.0; problem.p];
    for r in &problem.rows {
        let ind = if r.t - dot(&r.covariates, beta) <= 0.0 { 1.0 } else { 0.0 };
        let s = r.weight * (tau - ind);
        for (gk, xk) in g.iter_mut().zip(&r.covariates) {
            *gk += s * xk;
        }
    }
    g.iter().map(|v| v / n).collect()
}

/// Bound on each subgradient component at a nondegenerate vertex solution:
/// the `p` rows on the hyperplane can each move it by at most `w ||x|| / n`.
pub fn subgradient_bound(problem: &CheckLossProblem) -> f64 {
    let n = problem.n_subjects().max(1) as f64;
    let max_norm = problem
        .rows
        .iter()
        .map(|r| dot(&r.covariates, &r.covariates).sqrt())
        .fold(0.0, f64::max);
    let max_w = problem.rows.iter().map(|r| r.weight).fold(0.0, f64::max);
    problem.p as f64 * max_norm * max_w / n
}

/// Indices of columns that are linear combinations of earlier ones.
fn dependent_columns(x: &[&[f64]], p: usize) -> Vec<usize> {
    let n = x.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for k in 0..p {
        let mut col: Vec<f64> = x.iter().map(|row| row[k]).collect();
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Two passes of modified Gram-Schmidt.
        for _ in 0..2 {
            for q in &basis {
                let proj: f64 = (0..n).map(|i| q[i] * col[i]).sum();
                for i in 0..n {
                    col[i] -= proj * q[i];
                }
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            dependent.push(k);
        } else {
            basis.push(col.into_iter().map(|v| v / norm).collect());
        }
    }
    dependent
}

/// Solves `m x = rhs` (or `m' x = rhs`) for a small dense matrix stored by columns.
fn solve_dense(cols: &[Vec<f64>], rhs: &[f64], transpose: bool) -> Option<Vec<f64>> {
    let p = rhs.len();
    let mut a = vec![vec![0.0; p + 1]; p];
    for r in 0..p {
        for c in 0..p {
            a[r][c] = if transpose { cols[r][c] } else { cols[c][r] };
        }
        a[r][p] = rhs[r];
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[piv][c].abs() < 1e-14 {
            return None;
        }
        a.swap(c, piv);
        for r in (c + 1)..p {
            let f = a[r][c] / a[c][c];
            if f != 0.0 {
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let mut x = vec![0.0; p];
    for c in (0..p).rev() {
        let s: f64 = ((c + 1)..p).map(|k| a[c][k] * x[k]).sum();
        x[c] = (a[c][p] - s) / a[c][c];
    }
    Some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    Lower,
    Upper,
}

/// Bounded-variable simplex for `max c'v  s.t.  A v = 0, lo <= v <= hi`,
/// where the first `n` columns are data rows and the last `p` are artificials.
struct Simplex<'a> {
    cols: Vec<&'a [f64]>,
    p: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Vec<f64>,
    status: Vec<Status>,
    basis: Vec<usize>,
    /// Column vectors of the artificials (signed unit vectors).
    art_cols: Vec<Vec<f64>>,
    n: usize,
}

impl<'a> Simplex<'a> {
    fn column(&self, j: usize) -> &[f64] {
        if j < self.n {
            self.cols[j]
        } else {
            &self.art_cols[j - self.n]
        }
    }

    fn basis_cols(&self) -> Vec<Vec<f64>> {
        self.basis.iter().map(|&j| self.column(j).to_vec()).collect()
    }

    /// Recomputes basic values from the nonbasic ones.
    fn refresh_basic(&mut self) -> Result<()> {
        let mut rhs = vec![0.0; self.p];
        for j in 0..self.value.len() {
            if self.status[j] != Status::Basic && self.value[j] != 0.0 {
                let col = self.column(j);
                for k in 0..self.p {
                    rhs[k] -= col[k] * self.value[j];
                }
            }
        }
        let xb = solve_dense(&self.basis_cols(), &rhs, false)
            .ok_or_else(|| IcqrError::Solver("singular basis".into()))?;
        for (k, &j) in self.basis.iter().enumerate() {
            self.value[j] = xb[k];
        }
        Ok(())
    }

    fn multipliers(&self, cost: &[f64]) -> Result<Vec<f64>> {
        let cb: Vec<f64> = self.basis.iter().map(|&j| cost[j]).collect();
        solve_dense(&self.basis_cols(), &cb, true)
            .ok_or_else(|| IcqrError::Solver("singular basis".into()))
    }

    /// Runs the simplex to optimality for `cost`. Returns the final multipliers.
    fn optimize(&mut self, cost: &[f64], scale: f64) -> Result<Vec<f64>> {
        let total = self.value.len();
        let d_tol = 1e-11 * scale.max(1.0);
        let max_iter = 50 * (total + 10);
        let mut bland = false;
        let mut best = f64::NEG_INFINITY;
        let mut stall = 0;
        for _ in 0..max_iter {
            let pi = self.multipliers(cost)?;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                if self.status[j] == Status::Basic || self.hi[j] - self.lo[j] <= 0.0 {
                    continue;
                }
                let d = cost[j] - dot(&pi, self.column(j));
                let improving = match self.status[j] {
                    Status::Lower => d > d_tol,
                    Status::Upper => d < -d_tol,
                    Status::Basic => false,
                };
                if !improving {
                    continue;
                }
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best_d)| d.abs() > best_d.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, _)) = entering else {
                return Ok(pi);
            };
            let dir = if self.status[q] == Status::Lower { 1.0 } else { -1.0 };
            let y = solve_dense(&self.basis_cols(), self.column(q), false)
                .ok_or_else(|| IcqrError::Solver("singular basis".into()))?;

            // Ratio test: basic values move by -dir * theta * y.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, Status)> = None;
            for (k, &j) in self.basis.iter().enumerate() {
                let rate = -dir * y[k];
                if rate.abs() <= 1e-12 {
                    continue;
                }
                let (room, bound) = if rate < 0.0 {
                    ((self.value[j] - self.lo[j]).max(0.0) / -rate, Status::Lower)
                } else {
                    ((self.hi[j] - self.value[j]).max(0.0) / rate, Status::Upper)
                };
                let better = room < theta - 1e-15
                    || (room <= theta + 1e-15
                        && leave.is_some_and(|(lk, _)| self.basis[lk] > j));
                if better {
                    theta = room;
                    leave = Some((k, bound));
                }
            }
            if !theta.is_finite() {
                return Err(IcqrError::Solver("unbounded direction".into()));
            }

            match leave {
                None => {
                    self.status[q] = if dir > 0.0 { Status::Upper } else { Status::Lower };
                    self.value[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
                Some((k, bound)) => {
                    let out = self.basis[k];
                    self.status[out] = bound;
                    self.value[out] = if bound == Status::Lower { self.lo[out] } else { self.hi[out] };
                    self.value[q] += dir * theta;
                    self.status[q] = Status::Basic;
                    self.basis[k] = q;
                }
            }
            self.refresh_basic()?;

            let obj: f64 = (0..total).map(|j| cost[j] * self.value[j]).sum();
            if obj > best + 1e-12 * scale.max(1.0) {
                best = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall > STALL_LIMIT {
                    bland = true;
                }
            }
        }
        Err(IcqrError::Solver("simplex iteration limit reached".into()))
    }
}

/// Minimizes the weighted check loss exactly and returns a vertex solution.
pub fn solve(problem: &CheckLossProblem) -> Result<QuantileFit> {
    let p = problem.p;
    let tau = problem.tau.value();
    let active: Vec<&AugmentedRow> = problem
        .rows
        .iter()
        .filter(|r| r.weight >= ZERO_WEIGHT)
        .collect();
    if active.len() < p {
        return Err(IcqrError::TooFewRows {
            needed: p,
            found: active.len(),
        });
    }
    let x: Vec<&[f64]> = active.iter().map(|r| r.covariates.as_slice()).collect();
    let dependent = dependent_columns(&x, p);
    if !dependent.is_empty() {
        return Err(IcqrError::RankDeficient {
            dependent_columns: dependent,
        });
    }

    let n = active.len();
    let mut lo: Vec<f64> = active.iter().map(|r| (tau - 1.0) * r.weight).collect();
    let mut hi: Vec<f64> = active.iter().map(|r| tau * r.weight).collect();

    // Start rows above the median response at their upper bound.
    let mut sorted_t: Vec<f64> = active.iter().map(|r| r.t).collect();
    sorted_t.sort_by(f64::total_cmp);
    let median_t = sorted_t[n / 2];
    let mut value = Vec::with_capacity(n + p);
    let mut status = Vec::with_capacity(n + p);
    for (i, r) in active.iter().enumerate() {
        if r.t > median_t {
            value.push(hi[i]);
            status.push(Status::Upper);
        } else {
            value.push(lo[i]);
            status.push(Status::Lower);
        }
    }
    let mut resid = vec![0.0; p];
    for (i, r) in active.iter().enumerate() {
        for k in 0..p {
            resid[k] -= r.covariates[k] * value[i];
        }
    }
    let mut art_cols = Vec::with_capacity(p);
    for k in 0..p {
        let sign = if resid[k] < 0.0 { -1.0 } else { 1.0 };
        let mut col = vec![0.0; p];
        col[k] = sign;
        art_cols.push(col);
        value.push(resid[k].abs());
        status.push(Status::Basic);
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    let mut simplex = Simplex {
        cols: x,
        p,
        lo,
        hi,
        value,
        status,
        basis: (n..n + p).collect(),
        art_cols,
        n,
    };

    let scale_w = active.iter().map(|r| r.weight).fold(0.0, f64::max);
    let mut phase1 = vec![0.0; n + p];
    phase1[n..].iter_mut().for_each(|c| *c = -1.0);
    simplex.optimize(&phase1, scale_w)?;
    let infeasibility: f64 = simplex.value[n..].iter().sum();
    if infeasibility > 1e-8 * scale_w.max(1.0) * n as f64 {
        return Err(IcqrError::Solver(format!(
            "dual feasibility phase ended at {infeasibility}"
        )));
    }

    // Retire the artificials: pin them at zero and pivot any basic ones out.
    for j in n..n + p {
        simplex.hi[j] = 0.0;
        simplex.value[j] = 0.0;
        if simplex.status[j] != Status::Basic {
            simplex.status[j] = Status::Lower;
        }
    }
    for k in 0..p {
        let j = simplex.basis[k];
        if j < n {
            continue;
        }
        let bcols = simplex.basis_cols();
        let mut e = vec![0.0; p];
        e[k] = 1.0;
        let row = solve_dense(&bcols, &e, true)
            .ok_or_else(|| IcqrError::Solver("singular basis".into()))?;
        let replacement = (0..n)
            .filter(|&i| simplex.status[i] != Status::Basic)
            .map(|i| (i, dot(&row, simplex.cols[i]).abs()))
            .filter(|&(_, v)| v > 1e-9)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| IcqrError::Solver("cannot drive artificial out of basis".into()))?;
        simplex.status[j] = Status::Lower;
        simplex.status[replacement] = Status::Basic;
        simplex.basis[k] = replacement;
        simplex.refresh_basic()?;
    }

    let mut cost: Vec<f64> = active.iter().map(|r| r.t).collect();
    cost.extend(std::iter::repeat_n(0.0, p));
    let scale_t = active.iter().map(|r| r.t.abs()).fold(0.0, f64::max) * scale_w;
    let beta = simplex.optimize(&cost, scale_t)?;

    let objective = problem.objective(&beta);
    let g = subgradient(problem, &beta);
    Ok(QuantileFit {
        subgradient_norm: g.iter().map(|v| v * v).sum::<f64>().sqrt(),
        beta,
        tau: problem.tau,
        objective,
        n_used: problem.rows.len(),
    })
}
