//! Wilcoxon signed-rank redundancy test.

use serde::{Deserialize, Serialize};

use crate::error::{DofsError, Result};
use crate::stats;

/// Series shorter than this are not tested (p is reported as 1).
pub const MIN_LENGTH: usize = 5;
/// Largest effective sample size for which the exact null distribution is used.
pub const EXACT_MAX: usize = 12;

/// Differences below this fraction of the largest input magnitude are zero.
const ZERO_TOL: f64 = 1e-12;
/// Relative gap under which two absolute differences are tied.
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `W = sum(sign(d_i) * R_i)` over nonzero differences.
    pub statistic: f64,
    pub z: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n_effective: usize,
    pub exact: bool,
    /// Input was shorter than [`MIN_LENGTH`].
    pub degenerate: bool,
}

/// Signed midranks of the nonzero differences `x - y`, in no particular
/// order. Magnitudes within `TIE_TOL` of each other share a rank.
fn signed_ranks(x: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let scale = x
        .iter()
        .chain(y)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| d.abs() > ZERO_TOL * scale)
        .collect();
    diffs.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut out = Vec::with_capacity(diffs.len());
    let mut i = 0;
    while i < diffs.len() {
        let mut j = i + 1;
        while j < diffs.len() && diffs[j].abs() - diffs[j - 1].abs() <= TIE_TOL * diffs[j].abs() {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let rank = (i + 1 + j) as f64 / 2.0;
        for d in &diffs[i..j] {
            out.push((d.signum(), rank));
        }
        i = j;
    }
    out
}

/// Exact two-sided p-value `P(|W| >= |w_obs|)` under independent
/// equiprobable signs. Ranks are doubled so midranks become integers.
fn exact_p(ranks: &[f64], w_obs: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    // counts[t] = number of sign patterns whose positive doubled ranks sum to t
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for t in (r..=total).rev() {
            counts[t] += counts[t - r];
        }
    }
    let obs = (2.0 * w_obs).abs().round() as i64;
    let hits: u64 = counts
        .iter()
        .enumerate()
        .filter(|(t, _)| (2 * *t as i64 - total as i64).abs() >= obs)
        .map(|(_, c)| c)
        .sum();
    hits as f64 / (1u64 << ranks.len()) as f64
}

/// Signed-rank test of `x` against `y`.
///
/// Zero differences are dropped, ties get midranks. The z-score is
/// `W / sqrt(N(N+1)(2N+1)/6)`; the p-value is exact for `N <= 12` and from
/// the normal approximation otherwise (no continuity correction).
pub fn wilcoxon_test(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(DofsError::InvalidInput(format!(
            "wilcoxon needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(DofsError::NonFinite("wilcoxon input"));
    }
    let ranked = signed_ranks(x, y);
    let n = ranked.len();
    let statistic: f64 = ranked.iter().map(|(s, r)| s * r).sum();
    let nf = n as f64;
    let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 6.0).sqrt();
    let z = if n == 0 { 0.0 } else { statistic / sd };

    let degenerate = x.len() < MIN_LENGTH;
    let exact = !degenerate && n <= EXACT_MAX;
    let p_value = if degenerate || n == 0 {
        1.0
    } else if exact {
        let ranks: Vec<f64> = ranked.iter().map(|(_, r)| *r).collect();
        exact_p(&ranks, statistic)
    } else {
        stats::normal_two_sided_p(z)
    };
    Ok(WilcoxonResult {
        statistic,
        z,
        p_value,
        n_effective: n,
        exact,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterDecision {
    Keep,
    /// Redundant with the selected feature at `position` (p > alpha).
    Discard { position: usize, p_value: f64 },
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Keeps `f` only if it differs significantly (p <= alpha) from every
/// selected feature; stops at the first redundant match.
pub fn wilcoxon_filter(selected: &[&[f64]], f: &[f64], alpha: f64) -> Result<FilterDecision> {
    for (position, x) in selected.iter().enumerate() {
        if x.len() != f.len() {
            return Err(DofsError::InvalidInput(format!(
                "feature length {} does not match selected length {}",
                f.len(),
                x.len()
            )));
        }
        let res = wilcoxon_test(x, f)?;
        if res.p_value > alpha {
            return Ok(FilterDecision::Discard {
                position,
                p_value: res.p_value,
            });
        }
    }
    Ok(FilterDecision::Keep)
}
