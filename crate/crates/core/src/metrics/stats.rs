use serde::{Deserialize, Serialize};

use super::MetricError;

/// Sample size at or below which p-values are computed exactly.
pub const EXACT_LIMIT: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks doubled so that every rank is an integer, in input order.
pub fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j; twice their mean is i+1+j
        let r2 = (i + 1 + j) as u64;
        for &k in &order[i..j] {
            out[k] = r2;
        }
        i = j;
    }
    out
}

fn tie_sizes(ranks2: &[u64]) -> Vec<f64> {
    let mut sorted = ranks2.to_vec();
    sorted.sort_unstable();
    sorted
        .chunk_by(|a, b| a == b)
        .map(|c| c.len() as f64)
        .filter(|&t| t > 1.0)
        .collect()
}

fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Mann-Whitney U for the first sample, with a two-sided p-value.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Empty("sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks2 = doubled_midranks(&pooled);
    let sum2: u64 = ranks2[..n1].iter().sum();
    let u = sum2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    if n <= EXACT_LIMIT {
        let mean2 = (n1 * (n + 1)) as i64;
        let dev = (sum2 as i64 - mean2).abs();
        let dist = subset_sum_counts(&ranks2, n1);
        let total: u64 = dist.iter().sum();
        let extreme: u64 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| (*s as i64 - mean2).abs() >= dev)
            .map(|(_, c)| c)
            .sum();
        return Ok(TestResult { statistic: u, p_value: extreme as f64 / total as f64, exact: true });
    }
    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let ties: f64 = tie_sizes(&ranks2).iter().map(|t| t * t * t - t).sum();
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let diff = (u - f1 * f2 / 2.0).abs();
        normal_two_sided((diff - 0.5).max(0.0) / var.sqrt())
    };
    Ok(TestResult { statistic: u, p_value: p, exact: false })
}

/// `counts[s]` = number of size-`k` subsets of `ranks` summing to `s`.
fn subset_sum_counts(ranks: &[u64], k: usize) -> Vec<u64> {
    let max: u64 = ranks.iter().sum();
    let width = max as usize + 1;
    let mut table = vec![vec![0u64; width]; k + 1];
    table[0][0] = 1;
    for &r in ranks {
        let r = r as usize;
        for j in (1..=k).rev() {
            for s in (r..width).rev() {
                table[j][s] += table[j - 1][s - r];
            }
        }
    }
    table.swap_remove(k)
}

/// Wilcoxon signed-rank on paired samples. Zero differences are dropped; the
/// statistic is the positive rank sum.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    if diffs.is_empty() {
        return Err(MetricError::AllZeroDifferences);
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks2 = doubled_midranks(&abs);
    let plus2: u64 = ranks2.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks2.iter().sum();
    let w = plus2 as f64 / 2.0;
    if n <= EXACT_LIMIT {
        // every sign assignment is equally likely under the null
        let mut dist = vec![0u64; total2 as usize + 1];
        dist[0] = 1;
        for &r in &ranks2 {
            for s in (r as usize..dist.len()).rev() {
                dist[s] += dist[s - r as usize];
            }
        }
        let dev = (2 * plus2 as i64 - total2 as i64).abs();
        let extreme: u64 = dist
            .iter()
            .enumerate()
            .filter(|(s, _)| (2 * *s as i64 - total2 as i64).abs() >= dev)
            .map(|(_, c)| c)
            .sum();
        return Ok(TestResult { statistic: w, p_value: extreme as f64 / (1u64 << n) as f64, exact: true });
    }
    let nf = n as f64;
    let ties: f64 = tie_sizes(&ranks2).iter().map(|t| t * t * t - t).sum();
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
    let diff = (w - total2 as f64 / 4.0).abs();
    let p = if var <= 0.0 { 1.0 } else { normal_two_sided((diff - 0.5).max(0.0) / var.sqrt()) };
    Ok(TestResult { statistic: w, p_value: p, exact: false })
}

/// Paired effect size: mean difference over the sample standard deviation of
/// the differences.
pub fn paired_effect_size(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricError::Empty("paired sample of at least two"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(if sd == 0.0 { 0.0 } else { mean / sd })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::Empty("paired sample of at least two"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::InvalidArgument("zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}
