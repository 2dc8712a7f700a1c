//! Statistics of integer-valued point counts: gap (survival)
//! probabilities with confidence intervals, slope fits of -log p versus
//! λ², tail-bound and Lipschitz checks, and two-sample comparisons.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("not enough usable points for a slope fit (need ≥ 2, got {0})")]
    NotEnoughPoints(usize),
}

/// Sample of the counting function at a single λ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalCounts {
    pub lambda: f64,
    pub samples: Vec<i64>,
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    // Kahan-compensated sums keep the reduction order-stable.
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for &x in xs {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let mut ss = 0.0f64;
    let mut cc = 0.0f64;
    for &x in xs {
        let d = (x - mean) * (x - mean);
        let y = d - cc;
        let t = ss + y;
        cc = (t - ss) - y;
        ss = t;
    }
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, n: u64) -> (f64, f64) {
    const Z: f64 = 1.959963984540054; // Φ⁻¹(0.975)
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = Z * Z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Survival probability estimate P(N ≤ k) with CI and -log transform.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapEstimate {
    pub lambda: f64,
    pub k: i64,
    pub n_samples: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci95: (f64, f64),
    /// -ln p̂; infinite when no success was observed.
    pub neg_log_p: f64,
    /// Delta-method variance of -ln p̂: (1-p̂)/(n p̂).
    pub neg_log_var: f64,
}

pub fn gap_probability(counts: &EmpiricalCounts, k: i64) -> Result<GapEstimate, StatsError> {
    let n = counts.samples.len() as u64;
    if n == 0 {
        return Err(StatsError::InvalidInput("empty sample".into()));
    }
    let successes = counts.samples.iter().filter(|&&x| x <= k).count() as u64;
    let p = successes as f64 / n as f64;
    let (neg_log_p, neg_log_var) = if successes == 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (-p.ln(), (1.0 - p) / (n as f64 * p))
    };
    // No observed success: one-sided rule-of-three upper bound 3/n.
    let ci95 = if successes == 0 {
        (0.0, (3.0 / n as f64).min(1.0))
    } else {
        wilson_interval(successes, n)
    };
    Ok(GapEstimate {
        lambda: counts.lambda,
        k,
        n_samples: n,
        successes,
        p_hat: p,
        ci95,
        neg_log_p,
        neg_log_var,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub points_used: usize,
}

/// Unweighted least-squares fit of -ln p̂ against λ². Points with no
/// observed success (infinite -ln p̂) are dropped; the slope standard
/// error propagates the per-point delta-method variances.
pub fn gap_slope_fit(estimates: &[GapEstimate]) -> Result<SlopeFit, StatsError> {
    let pts: Vec<(f64, f64, f64)> = estimates
        .iter()
        .filter(|e| e.neg_log_p.is_finite())
        .map(|e| (e.lambda * e.lambda, e.neg_log_p, e.neg_log_var))
        .collect();
    if pts.len() < 2 {
        return Err(StatsError::NotEnoughPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let xbar = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.0 - xbar)).sum();
    if sxx == 0.0 {
        return Err(StatsError::InvalidInput("degenerate abscissae".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - xbar) * (p.1 - ybar)).sum();
    let slope = sxy / sxx;
    let var: f64 = pts
        .iter()
        .map(|p| (p.0 - xbar) * (p.0 - xbar) * p.2)
        .sum::<f64>()
        / (sxx * sxx);
    Ok(SlopeFit {
        slope,
        intercept: ybar - slope * xbar,
        slope_stderr: var.sqrt(),
        points_used: pts.len(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailCheck {
    pub a: f64,
    pub k: u32,
    pub bound: f64,
    pub frequency: f64,
    pub freq_stderr: f64,
    /// bound + 3 SE - frequency; the check passes when this is ≥ 0.
    pub margin: f64,
    pub pass: bool,
}

/// Checks the count-tail inequality P(|N| ≥ a·k) ≤ 2 (‖f‖₁ |λ| / (2π a))^k
/// against an empirical sample, with a 3-SE sampling allowance.
pub fn tail_bound_check(
    counts: &EmpiricalCounts,
    a: f64,
    k: u32,
    l1_norm: f64,
) -> Result<TailCheck, StatsError> {
    if counts.samples.is_empty() {
        return Err(StatsError::InvalidInput("empty sample".into()));
    }
    if !(a > 0.0) || k == 0 {
        return Err(StatsError::InvalidInput("need a > 0 and k ≥ 1".into()));
    }
    let n = counts.samples.len() as f64;
    let thresh = a * k as f64;
    let hits = counts
        .samples
        .iter()
        .filter(|&&x| (x.abs() as f64) >= thresh)
        .count() as f64;
    let freq = hits / n;
    let se = (freq * (1.0 - freq) / n).sqrt();
    let bound = 2.0 * (l1_norm * counts.lambda.abs() / (2.0 * PI * a)).powi(k as i32);
    let margin = bound + 3.0 * se - freq;
    Ok(TailCheck {
        a,
        k,
        bound,
        frequency: freq,
        freq_stderr: se,
        margin,
        pass: margin >= 0.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub ks_statistic: f64,
    /// Sum over the integer support of |CDF_a - CDF_b|.
    pub wasserstein1: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
    /// |mean_a - mean_b| in units of the combined standard error.
    pub mean_gap_sigmas: f64,
}

fn histogram(xs: &[i64]) -> BTreeMap<i64, u64> {
    let mut h = BTreeMap::new();
    for &x in xs {
        *h.entry(x).or_insert(0u64) += 1;
    }
    h
}

/// Two-sample KS distance between empirical CDFs over integer support.
pub fn ks_from_histograms(a: &BTreeMap<i64, u64>, b: &BTreeMap<i64, u64>) -> f64 {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return f64::NAN;
    }
    let mut keys: Vec<i64> = a.keys().chain(b.keys()).cloned().collect();
    keys.sort_unstable();
    keys.dedup();
    let (mut ca, mut cb, mut d) = (0u64, 0u64, 0.0f64);
    for k in keys {
        ca += a.get(&k).copied().unwrap_or(0);
        cb += b.get(&k).copied().unwrap_or(0);
        d = d.max((ca as f64 / na as f64 - cb as f64 / nb as f64).abs());
    }
    d
}

pub fn ks_two_sample(a: &[i64], b: &[i64]) -> Result<TwoSampleReport, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::InvalidInput("empty sample".into()));
    }
    let ks = ks_from_histograms(&histogram(a), &histogram(b));
    let w1 = wasserstein1_integer(a, b);
    let fa: Vec<f64> = a.iter().map(|&x| x as f64).collect();
    let fb: Vec<f64> = b.iter().map(|&x| x as f64).collect();
    let (ma, sa) = mean_stderr(&fa);
    let (mb, sb) = mean_stderr(&fb);
    let combined = (sa * sa + sb * sb).sqrt();
    Ok(TwoSampleReport {
        ks_statistic: ks,
        wasserstein1: w1,
        mean_a: ma,
        mean_b: mb,
        stderr_a: sa,
        stderr_b: sb,
        mean_gap_sigmas: if combined > 0.0 {
            (ma - mb).abs() / combined
        } else if ma == mb {
            0.0
        } else {
            f64::INFINITY
        },
    })
}

/// Two-sample KS distance for real-valued samples.
pub fn ks_two_sample_real(a: &[f64], b: &[f64]) -> f64 {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(|p, q| p.partial_cmp(q).unwrap());
    xb.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        // Ties: advance past the shared value in both samples before
        // evaluating the CDF difference.
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] == x {
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// 1-Wasserstein distance between empirical laws of integer samples:
/// sum of |CDF_a - CDF_b| over the integer support.
pub fn wasserstein1_integer(a: &[i64], b: &[i64]) -> f64 {
    let ha = histogram(a);
    let hb = histogram(b);
    let na: u64 = ha.values().sum();
    let nb: u64 = hb.values().sum();
    let lo = *ha.keys().next().unwrap().min(hb.keys().next().unwrap());
    let hi = *ha.keys().last().unwrap().max(hb.keys().last().unwrap());
    let (mut ca, mut cb, mut w) = (0u64, 0u64, 0.0f64);
    for k in lo..hi {
        ca += ha.get(&k).copied().unwrap_or(0);
        cb += hb.get(&k).copied().unwrap_or(0);
        w += (ca as f64 / na as f64 - cb as f64 / nb as f64).abs();
    }
    w
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub mean_increment: f64,
    pub stderr: f64,
    pub mean_abs_increment: f64,
    /// Expected mean increment (λ₂-λ₁) ‖f‖₁ / (2π).
    pub expected_mean: f64,
    /// |mean - expected| ≤ 3 SE.
    pub pass_mean: bool,
    /// E|ΔN| (an upper bound on W₁ of the coupled pair) ≤ (λ₂-λ₁) + 3 SE.
    pub pass_w1: bool,
}

/// Checks the Lipschitz property of the coupled counting field from
/// per-path increments ΔN = N(λ₂) - N(λ₁).
pub fn lipschitz_continuity_check(
    increments: &[i64],
    lambda_low: f64,
    lambda_high: f64,
    l1_norm: f64,
) -> Result<LipschitzReport, StatsError> {
    if increments.is_empty() {
        return Err(StatsError::InvalidInput("empty sample".into()));
    }
    if !(lambda_high > lambda_low) {
        return Err(StatsError::InvalidInput("need λ₂ > λ₁".into()));
    }
    let xs: Vec<f64> = increments.iter().map(|&x| x as f64).collect();
    let (mean, se) = mean_stderr(&xs);
    let abs: Vec<f64> = increments.iter().map(|&x| x.abs() as f64).collect();
    let (mean_abs, se_abs) = mean_stderr(&abs);
    let expected = (lambda_high - lambda_low) * l1_norm / (2.0 * PI);
    Ok(LipschitzReport {
        lambda_low,
        lambda_high,
        mean_increment: mean,
        stderr: se,
        mean_abs_increment: mean_abs,
        expected_mean: expected,
        pass_mean: (mean - expected).abs() <= 3.0 * se,
        pass_w1: mean_abs <= (lambda_high - lambda_low) + 3.0 * se_abs,
    })
}
