//! Wilcoxon rank-sum and signed-rank tests, and mean/SD summaries.
//!
//! Ranks are midranks. Internally every rank is doubled so that tied
//! (half-integer) ranks stay integral and exact null distributions can be
//! built by counting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest sample size (combined for rank-sum) for which `Method::Auto`
/// computes the exact null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// Mann-Whitney U of the first sample, or the smaller signed-rank sum.
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    /// Sample sizes: `[n_a, n_b]` for rank-sum, `[pairs used]` for signed-rank.
    pub n: Vec<usize>,
    /// `Exact` or `NormalApprox`, never `Auto`.
    pub method: Method,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample SD (n−1 denominator); absent for a single value.
    pub sd: Option<f64>,
}

impl Summary {
    /// `mean±sd` with the given number of decimals, e.g. `0.74±0.08`.
    pub fn format(&self, decimals: usize) -> String {
        match self.sd {
            Some(sd) => format!("{:.*}±{:.*}", decimals, self.mean, decimals, sd),
            None => format!("{:.*}", decimals, self.mean),
        }
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Stats("cannot summarize an empty sample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Summary { n, mean, sd })
}

/// Doubled midranks of `values` (rank 1 ↦ 2) and the tie group sizes.
fn doubled_midranks(values: &[f64]) -> Result<(Vec<u64>, Vec<usize>)> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Stats("NaN in sample".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Ranks start+1 ..= end; twice their mean is start + 1 + end.
        let r2 = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = r2;
        }
        ties.push(end - start);
        start = end;
    }
    Ok((ranks, ties))
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

/// Two-sided p from the null counts of a (doubled) statistic.
fn exact_two_sided(counts: &[f64], observed: usize) -> f64 {
    let total: f64 = counts.iter().sum();
    let lower: f64 = counts[..=observed].iter().sum::<f64>() / total;
    let upper: f64 = counts[observed..].iter().sum::<f64>() / total;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_two_sided(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((stat - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

fn resolve(method: Method, n: usize) -> Method {
    match method {
        Method::Auto if n <= EXACT_MAX_N => Method::Exact,
        Method::Auto => Method::NormalApprox,
        m => m,
    }
}

pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    wilcoxon_rank_sum_with(a, b, Method::Auto)
}

/// Mann-Whitney U test of `a` against `b`.
pub fn wilcoxon_rank_sum_with(a: &[f64], b: &[f64], method: Method) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Stats("rank-sum test needs two non-empty samples".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled)?;
    let r2: u64 = ranks[..na].iter().sum();
    // U = R − na(na+1)/2, everything doubled.
    let offset2 = (na * (na + 1)) as u64;
    let u = (r2 - offset2) as f64 / 2.0;

    let method = resolve(method, n);
    let p_value = match method {
        Method::Exact => {
            // counts[k][s]: subsets of size k with doubled rank sum s.
            let max_sum: usize = ranks.iter().map(|&r| r as usize).sum();
            let mut counts = vec![vec![0f64; max_sum + 1]; na + 1];
            counts[0][0] = 1.0;
            for &r in &ranks {
                let r = r as usize;
                for k in (1..=na).rev() {
                    let (lo, hi) = counts.split_at_mut(k);
                    for s in (r..=max_sum).rev() {
                        hi[0][s] += lo[k - 1][s - r];
                    }
                }
            }
            exact_two_sided(&counts[na], r2 as usize)
        }
        _ => {
            let mean = (na * nb) as f64 / 2.0;
            let nf = n as f64;
            let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
            normal_two_sided(u, mean, var)
        }
    };
    Ok(TestResult { statistic: u, p_value, n: vec![na, nb], method })
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(x, y, Method::Auto)
}

/// Paired test on `x − y`; zero differences are dropped.
pub fn wilcoxon_signed_rank_with(x: &[f64], y: &[f64], method: Method) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!("paired samples differ in length: {} vs {}", x.len(), y.len())));
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Stats("degenerate pairing: every difference is zero".into()));
    }
    let n = diffs.len();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_midranks(&abs)?;
    let w_plus2: u64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let total2: u64 = ranks.iter().sum();
    let w_min = w_plus2.min(total2 - w_plus2) as f64 / 2.0;

    let method = resolve(method, n);
    let p_value = match method {
        Method::Exact => {
            let mut counts = vec![0f64; total2 as usize + 1];
            counts[0] = 1.0;
            for &r in &ranks {
                for s in (r as usize..=total2 as usize).rev() {
                    counts[s] += counts[s - r as usize];
                }
            }
            exact_two_sided(&counts, w_plus2 as usize)
        }
        _ => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
            normal_two_sided(w_min, mean, var)
        }
    };
    Ok(TestResult { statistic: w_min, p_value, n: vec![n], method })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_examples() {
        let r = wilcoxon_rank_sum(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.method, Method::Exact);

        let r = wilcoxon_signed_rank(&[2.0, 3.0, 4.0, 5.0, 6.0], &[1.0; 5]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [0.3, 0.7, 0.7, 0.9];
        assert_eq!(wilcoxon_rank_sum(&a, &a).unwrap().p_value, 1.0);
        assert_eq!(wilcoxon_rank_sum_with(&a, &a, Method::NormalApprox).unwrap().p_value, 1.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(wilcoxon_rank_sum(&[], &[1.0]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn midranks_handle_ties() {
        let (r, t) = doubled_midranks(&[5.0, 1.0, 5.0, 3.0]).unwrap();
        assert_eq!(r, vec![7, 2, 7, 4]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn summaries() {
        let s = summarize(&[0.5]).unwrap();
        assert_eq!((s.mean, s.sd), (0.5, None));
        let s = summarize(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.sd), (1.0, Some(0.0)));
        let s = summarize(&[0.70, 0.78]).unwrap();
        assert!((s.mean - 0.74).abs() < 1e-12);
        assert!((s.sd.unwrap() - 0.0565685).abs() < 1e-6);
        assert_eq!(s.format(2), "0.74±0.06");
    }

    #[test]
    fn large_samples_switch_to_normal() {
        let a: Vec<f64> = (0..15).map(f64::from).collect();
        let b: Vec<f64> = (0..15).map(|i| f64::from(i) + 0.5).collect();
        assert_eq!(wilcoxon_rank_sum(&a, &b).unwrap().method, Method::NormalApprox);
    }
}
