//! Unconditional self-consistent estimate of the event-time distribution
//! for partly interval-censored data.
//!
//! Probability mass lives on the finite support grid plus one terminal atom
//! at `+inf` that absorbs right-censored mass beyond the last grid point.

use serde::{Deserialize, Serialize};

use crate::error::{IcqrError, Result};
use crate::model::{Dataset, Observation};
use crate::npmle::{support_grid, SupportGrid};
use crate::weighting::CdfProvider;

pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnbullEstimate {
    grid: SupportGrid,
    /// Mass at each grid point, then at `+inf`.
    masses: Vec<f64>,
    /// `F` at each grid point.
    values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl TurnbullEstimate {
    pub fn grid(&self) -> &SupportGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mass left beyond the last finite grid point.
    pub fn mass_at_infinity(&self) -> f64 {
        self.masses[self.grid.len()]
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t == f64::INFINITY {
            return 1.0;
        }
        self.grid.floor_index(t).map_or(0.0, |j| self.values[j])
    }

    pub fn survival(&self, t: f64) -> f64 {
        1.0 - self.eval(t)
    }
}

impl CdfProvider for TurnbullEstimate {
    fn cdf(&self, t: f64, _x: &[f64]) -> Result<f64> {
        Ok(self.eval(t))
    }
}

/// Atoms `[a, b)` a subject's event can occupy; index `m` is the `+inf` atom.
fn atom_range(grid: &SupportGrid, obs: &Observation) -> (usize, usize) {
    let m = grid.len();
    if obs.exact {
        let j = grid.index_of(obs.left).expect("exact time on grid");
        return (j, j + 1);
    }
    let start = if obs.left.is_finite() {
        grid.index_of(obs.left).expect("finite endpoint on grid") + 1
    } else {
        0
    };
    let end = if obs.right.is_finite() {
        grid.index_of(obs.right).expect("finite endpoint on grid") + 1
    } else {
        m + 1
    };
    (start, end)
}

/// Self-consistent estimate with equal subject weights.
pub fn turnbull(dataset: &Dataset, tol: f64, max_iter: usize) -> Result<TurnbullEstimate> {
    turnbull_weighted(dataset, None, tol, max_iter)
}

/// Self-consistent estimate with subject weights (normalized internally).
pub fn turnbull_weighted(
    dataset: &Dataset,
    weights: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<TurnbullEstimate> {
    if max_iter == 0 || !(tol > 0.0) {
        return Err(IcqrError::InvalidArgument(
            "self-consistency iteration needs max_iter >= 1 and tol > 0".into(),
        ));
    }
    let n = dataset.len();
    let v = normalized_weights(n, weights)?;
    let grid = support_grid(dataset)?;
    let m = grid.len();
    let ranges: Vec<(usize, usize)> = dataset.iter().map(|o| atom_range(&grid, o)).collect();

    let mut masses = vec![1.0 / (m + 1) as f64; m + 1];
    let mut next = vec![0.0; m + 1];
    let mut prefix = vec![0.0; m + 2];
    let mut scale = vec![0.0; m + 2];
    let mut values = cumulative(&masses[..m]);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < max_iter {
        iterations += 1;
        for j in 0..=m {
            prefix[j + 1] = prefix[j] + masses[j];
        }
        scale.iter_mut().for_each(|s| *s = 0.0);
        for (&(a, b), &vi) in ranges.iter().zip(&v) {
            if vi == 0.0 {
                continue;
            }
            let total = prefix[b] - prefix[a];
            // An interval whose atoms all lost their mass is restarted flat.
            if total > 0.0 {
                scale[a] += vi / total;
                scale[b] -= vi / total;
            } else {
                let share = vi / (b - a) as f64;
                next[a..b].iter_mut().for_each(|x| *x += share);
            }
        }
        let mut run = 0.0;
        for j in 0..=m {
            run += scale[j];
            next[j] += masses[j] * run;
        }
        std::mem::swap(&mut masses, &mut next);
        next.iter_mut().for_each(|x| *x = 0.0);
        let fresh = cumulative(&masses[..m]);
        let delta = fresh
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = fresh;
        if delta <= tol {
            converged = true;
            break;
        }
    }

    Ok(TurnbullEstimate {
        grid,
        masses,
        values,
        iterations,
        converged,
    })
}

fn cumulative(masses: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    masses
        .iter()
        .map(|p| {
            acc += p;
            acc.min(1.0)
        })
        .collect()
}

fn normalized_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(IcqrError::InvalidArgument(format!(
                    "expected {n} subject weights, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(IcqrError::InvalidArgument(
                    "subject weights must be finite and nonnegative".into(),
                ));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(IcqrError::InvalidArgument(
                    "subject weights sum to zero".into(),
                ));
            }
            Ok(w.iter().map(|x| x / total).collect())
        }
    }
}

/// Largest violation of the self-consistency equation over the grid:
/// `F(t) = sum_i v_i P(T_i <= t | record_i, F)` with `v_i = 1/n`.
///
/// `cdf` must satisfy `cdf(-inf) = 0` and `cdf(+inf) = 1`.
pub fn self_consistency_residual(dataset: &Dataset, cdf: &dyn Fn(f64) -> f64) -> Result<f64> {
    let grid = support_grid(dataset)?;
    let n = dataset.len() as f64;
    let mut worst: f64 = 0.0;
    for &t in grid.points() {
        let mut rhs = 0.0;
        for obs in dataset {
            rhs += if obs.exact {
                f64::from(u8::from(obs.left <= t))
            } else {
                let fl = cdf(obs.left);
                let fr = cdf(obs.right);
                let denom = fr - fl;
                if denom > 0.0 {
                    (cdf(obs.right.min(t)) - cdf(obs.left.min(t))) / denom
                } else {
                    f64::from(u8::from(obs.right <= t))
                }
            };
        }
        worst = worst.max((rhs / n - cdf(t)).abs());
    }
    Ok(worst)
}
