use serde::{Deserialize, Serialize};

use super::ProblemRecord;
use crate::error::{Error, Result};

/// One generated program for n@k / pass@k.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub public_reward: f64,
    /// Passes every private test.
    pub private_pass: bool,
}

/// Programs for one problem, in generation order.
pub type ProblemSamples = Vec<SampleResult>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub n: usize,
    pub k: usize,
}

impl MetricConfig {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k == 0 || n > k {
            return Err(Error::InvalidArgument(format!("need 1 <= n <= k, got n={n} k={k}")));
        }
        Ok(Self { n, k })
    }
}

fn scored(records: &[ProblemRecord]) -> Vec<f64> {
    records.iter().filter_map(|r| r.private_pass_rate).collect()
}

/// Mean private-test pass rate over problems that have private tests.
pub fn pass_rate_metric(records: &[ProblemRecord]) -> Result<f64> {
    let rates = scored(records);
    if rates.is_empty() {
        return Err(Error::EmptyInput("no problem with private tests".into()));
    }
    Ok(rates.iter().sum::<f64>() / rates.len() as f64)
}

/// Fraction of problems whose program passes every private test.
pub fn strict_accuracy(records: &[ProblemRecord]) -> Result<f64> {
    let rates = scored(records);
    if rates.is_empty() {
        return Err(Error::EmptyInput("no problem with private tests".into()));
    }
    Ok(rates.iter().filter(|&&r| r == 1.0).count() as f64 / rates.len() as f64)
}

/// Of the first `k` programs per problem, submit the `n` with the highest
/// public reward (earlier wins ties); fraction of problems where a submission
/// passes all private tests.
pub fn n_at_k(samples: &[ProblemSamples], n: usize, k: usize) -> Result<f64> {
    MetricConfig::new(n, k)?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("n@k over zero problems".into()));
    }
    let solved = samples
        .iter()
        .filter(|problem| {
            let mut pool: Vec<&SampleResult> = problem.iter().take(k).collect();
            pool.sort_by(|a, b| b.public_reward.total_cmp(&a.public_reward));
            pool.iter().take(n).any(|s| s.private_pass)
        })
        .count();
    Ok(solved as f64 / samples.len() as f64)
}

/// Fraction of problems where any of the first `k` programs passes all private tests.
pub fn pass_at_k(samples: &[ProblemSamples], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("pass@k over zero problems".into()));
    }
    let solved = samples
        .iter()
        .filter(|p| p.iter().take(k).any(|s| s.private_pass))
        .count();
    Ok(solved as f64 / samples.len() as f64)
}
