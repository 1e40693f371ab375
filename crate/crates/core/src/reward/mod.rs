//! Rewards: test-case pass rate and the shaped objectives built on it.

mod executor;

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use executor::{
    execute, normalize_output, program_hash, ExecutionOutcome, Executor, ExecutorConfig, MockEntry,
    MockExecutor, MockTable, ProcessExecutor, RawRun, RunStatus, Verdict, EXECUTOR_CMD_ENV,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    pub prompt: String,
    pub public_tests: Vec<TestCase>,
    pub private_tests: Vec<TestCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    PassRate,
    LengthPenalty,
    CommentEncouragement,
}

/// Objective parameters. Defaults: `lambda1 = 0.1`, `t = 20`, `lambda2 = 0.2`, `n_max = 5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub lambda1: f64,
    pub t: f64,
    pub lambda2: f64,
    pub n_max: u32,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self::new(RewardKind::PassRate)
    }
}

impl RewardSpec {
    pub fn new(kind: RewardKind) -> Self {
        Self {
            kind,
            lambda1: 0.1,
            t: 20.0,
            lambda2: 0.2,
            n_max: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t.is_nan() || self.t <= 0.0 || self.n_max < 1 {
            return Err(Error::InvalidArgument(format!(
                "reward spec needs t > 0 and n_max >= 1, got t={} n_max={}",
                self.t, self.n_max
            )));
        }
        Ok(())
    }

    /// Applies the objective to a pass rate `p` for program `code`.
    pub fn shape(&self, p: f64, code: &str) -> f64 {
        match self.kind {
            RewardKind::PassRate => p,
            RewardKind::LengthPenalty => reward_length(p, code_length(code), self),
            RewardKind::CommentEncouragement => {
                reward_comment(p, code_length(code), count_comments(code), self)
            }
        }
    }
}

/// `p + lambda1 * exp(-code_len / t)`
pub fn reward_length(p: f64, code_len: usize, spec: &RewardSpec) -> f64 {
    p + spec.lambda1 * (-(code_len as f64) / spec.t).exp()
}

/// `p + lambda1 * exp(-code_len / t) + lambda2 * min(1, n_comments / n_max)`
pub fn reward_comment(p: f64, code_len: usize, n_comments: usize, spec: &RewardSpec) -> f64 {
    reward_length(p, code_len, spec) + spec.lambda2 * (n_comments as f64 / spec.n_max as f64).min(1.0)
}

/// Number of `#` characters, string literals included.
pub fn count_comments(code: &str) -> usize {
    code.matches('#').count()
}

/// Character length of the program text.
pub fn code_length(code: &str) -> usize {
    code.chars().count()
}

/// Runs `program` on every test. A compile error fails all tests without running them.
pub fn run_tests<E: Executor + ?Sized>(program: &str, tests: &[TestCase], executor: &E) -> Result<Vec<ExecutionOutcome>> {
    if let Some(rejected) = executor.check(program)? {
        let outcome = executor::classify(rejected, "");
        return Ok(vec![outcome; tests.len()]);
    }
    tests.par_iter().map(|t| execute(executor, program, t)).collect()
}

/// Fraction of `tests` the program passes.
pub fn get_reward<E: Executor + ?Sized>(program: &str, tests: &[TestCase], executor: &E) -> Result<f64> {
    if tests.is_empty() {
        return Err(Error::EmptyInput("get_reward needs at least one test".into()));
    }
    let outcomes = run_tests(program, tests, executor)?;
    let passed = outcomes.iter().filter(|o| o.verdict == Verdict::Passed).count();
    Ok(passed as f64 / tests.len() as f64)
}

/// Score for a program, plus the raw pass rate it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reward: f64,
    pub pass_rate: f64,
}

/// Anything that can score a detokenized program.
pub trait RewardFn: Send + Sync {
    fn evaluate(&self, program: &str) -> Result<Evaluation>;
}

impl<R: RewardFn + ?Sized> RewardFn for &R {
    fn evaluate(&self, program: &str) -> Result<Evaluation> {
        (**self).evaluate(program)
    }
}

impl<R: RewardFn + ?Sized> RewardFn for Arc<R> {
    fn evaluate(&self, program: &str) -> Result<Evaluation> {
        (**self).evaluate(program)
    }
}

/// Pass rate on a fixed test list, shaped by a [`RewardSpec`].
pub struct TestReward {
    tests: Vec<TestCase>,
    executor: Arc<dyn Executor>,
    spec: RewardSpec,
}

impl TestReward {
    pub fn new(tests: Vec<TestCase>, executor: Arc<dyn Executor>, spec: RewardSpec) -> Result<Self> {
        if tests.is_empty() {
            return Err(Error::EmptyInput("reward-driven search needs public tests".into()));
        }
        spec.validate()?;
        Ok(Self { tests, executor, spec })
    }
}

impl RewardFn for TestReward {
    fn evaluate(&self, program: &str) -> Result<Evaluation> {
        let p = get_reward(program, &self.tests, self.executor.as_ref())?;
        Ok(Evaluation {
            reward: self.spec.shape(p, program),
            pass_rate: p,
        })
    }
}

/// Fixed program → reward table; unlisted programs score `default`.
#[derive(Debug, Clone, Default)]
pub struct TableReward {
    rewards: HashMap<String, f64>,
    default: f64,
}

impl TableReward {
    pub fn new(rewards: HashMap<String, f64>) -> Self {
        Self { rewards, default: 0.0 }
    }

    pub fn with_default(mut self, default: f64) -> Self {
        self.default = default;
        self
    }
}

impl RewardFn for TableReward {
    fn evaluate(&self, program: &str) -> Result<Evaluation> {
        let r = self.rewards.get(program).copied().unwrap_or(self.default);
        Ok(Evaluation {
            reward: r,
            pass_rate: r,
        })
    }
}

/// Adapts a closure `&str -> f64` into a [`RewardFn`].
pub struct FnReward<F>(pub F);

impl<F: Fn(&str) -> f64 + Send + Sync> RewardFn for FnReward<F> {
    fn evaluate(&self, program: &str) -> Result<Evaluation> {
        let r = (self.0)(program);
        Ok(Evaluation {
            reward: r,
            pass_rate: r,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tests(n: usize) -> Vec<TestCase> {
        (0..n)
            .map(|i| TestCase {
                input: i.to_string(),
                output: (2 * i).to_string(),
            })
            .collect()
    }

    fn mock_passing(program: &str, passing: &[usize]) -> MockExecutor {
        MockExecutor::new(&MockTable {
            entries: passing
                .iter()
                .map(|&i| MockEntry {
                    program_hash: None,
                    program: Some(program.into()),
                    input: i.to_string(),
                    verdict: "passed".into(),
                    stdout: (2 * i).to_string(),
                })
                .collect(),
        })
        .unwrap()
    }

    #[test]
    fn pass_fractions() {
        let all = mock_passing("P", &[0, 1, 2]);
        assert_eq!(get_reward("P", &tests(3), &all).unwrap(), 1.0);
        assert_eq!(get_reward("Q", &tests(3), &all).unwrap(), 0.0);
        let five = mock_passing("P", &[0, 2, 3, 5, 7]);
        assert_eq!(get_reward("P", &tests(8), &five).unwrap(), 0.625);
        assert!(matches!(get_reward("P", &[], &all), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn compile_error_short_circuits() {
        let mut table = MockTable::default();
        table.entries.push(MockEntry {
            program_hash: None,
            program: Some("P".into()),
            input: "0".into(),
            verdict: "passed".into(),
            stdout: "0".into(),
        });
        table.entries.push(MockEntry {
            program_hash: None,
            program: Some("P".into()),
            input: String::new(),
            verdict: "compile_error".into(),
            stdout: String::new(),
        });
        let exec = MockExecutor::new(&table).unwrap();
        let outcomes = run_tests("P", &tests(2), &exec).unwrap();
        assert!(outcomes.iter().all(|o| o.verdict == Verdict::CompileError));
        assert_eq!(get_reward("P", &tests(2), &exec).unwrap(), 0.0);
    }

    #[test]
    fn length_reward_examples() {
        let spec = RewardSpec::new(RewardKind::LengthPenalty);
        assert!((reward_length(1.0, 78, &spec) - 1.002_024_2).abs() < 1e-7);
        assert_eq!(reward_length(0.3, 0, &spec), 0.3 + 0.1);
        assert!(reward_length(0.0, 100_000, &spec) < 1e-300);
    }

    #[test]
    fn comment_reward_examples() {
        let spec = RewardSpec::new(RewardKind::CommentEncouragement);
        assert!((reward_comment(1.0, 100, 3, &spec) - 1.120_673_8).abs() < 1e-7);
        assert_eq!(reward_comment(0.5, 10, 5, &spec), reward_comment(0.5, 10, 50, &spec));
        assert_eq!(reward_comment(0.0, 0, 0, &spec), 0.1);
    }

    #[test]
    fn comment_and_length_counting() {
        assert_eq!(count_comments(""), 0);
        assert_eq!(count_comments("# hi\nx=1"), 1);
        assert_eq!(count_comments("'#' in string literal"), 1);
        assert_eq!(code_length(""), 0);
        assert_eq!(code_length(&"x".repeat(78)), 78);
    }

    #[test]
    fn spec_validation() {
        let mut s = RewardSpec::default();
        assert!(s.validate().is_ok());
        s.t = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn table_reward_defaults_to_zero() {
        let r = TableReward::new([("ab".to_string(), 0.5)].into());
        assert_eq!(r.evaluate("ab").unwrap().reward, 0.5);
        assert_eq!(r.evaluate("zz").unwrap().reward, 0.0);
    }
}
