//! Small numerical helpers: reproducible summation, moments, order
//! statistics and a few distribution functions.

use statrs::function::erf::{erf, erfc};

/// Pairwise (cascade) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor; 0 for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - mu) * (x - mu)).collect();
    (pairwise_sum(&sq) / (xs.len() - 1) as f64).sqrt()
}

/// Order statistic at level `q` of the empirical distribution: the
/// `ceil(q n)`-th smallest value (1-based, clamped to `[1, n]`).
pub fn order_statistic(xs: &[f64], q: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The slack keeps products like 0.025 * 40 from rounding up a rank.
    let k = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: rational approximation refined by one Halley step.
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "normal quantile needs p in (0, 1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const LOW: f64 = 0.02425;
    let x = if p < LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// Distribution function of the chi-squared law with 3 degrees of freedom.
pub fn chi3_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let r = (0.5 * x).sqrt();
    (erf(r) - (2.0 * x / std::f64::consts::PI).sqrt() * (-0.5 * x).exp()).clamp(0.0, 1.0)
}

fn chi3_pdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    x.sqrt() * (-0.5 * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Quantile of the chi-squared law with 3 degrees of freedom, solved by
/// safeguarded Newton iteration to `|F(q) - u| <= 1e-10` or bracket collapse.
pub fn chi3_quantile(u: f64) -> f64 {
    assert!(u > 0.0 && u < 1.0, "quantile needs u in (0, 1), got {u}");
    let (mut lo, mut hi) = (0.0, 1.0);
    while chi3_cdf(hi) < u {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi3_cdf(x) - u;
        if f.abs() <= 1e-12 {
            break;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = f / chi3_pdf(x);
        let cand = x - step;
        x = if cand > lo && cand < hi && step.is_finite() {
            cand
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    x
}
