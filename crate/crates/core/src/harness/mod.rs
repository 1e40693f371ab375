//! Experiment orchestration: run a decoder over a problem set, score the
//! chosen programs on private tests, and emit a JSON-lines report.

pub mod metrics;
pub mod oracle;
pub mod problems;
pub mod synthetic;

use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{pure_beam, sampling_filtering, smcg_td, DecodeOutcome};
use crate::cache::CacheStats;
use crate::decode::{GenerationBudget, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::model::{SequenceState, TokenModel};
use crate::reward::{get_reward, Evaluation, Executor, ProblemSpec, RewardSpec, TestReward};
use crate::rng;
use crate::search::{run_pgtd, BestProgram, RunTrace, SearchConfig};

pub use metrics::{n_at_k, pass_at_k, pass_rate_metric, strict_accuracy, MetricConfig, ProblemSamples, SampleResult};
pub use oracle::{brute_force_oracle, complete_sequence_count, OracleResult};
pub use problems::{load_problems, parse_problems, LoadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "pg-td")]
    PgTd,
    #[serde(rename = "beam")]
    Beam,
    #[serde(rename = "sf")]
    SamplingFiltering,
    #[serde(rename = "smcg")]
    Smcg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::PgTd => "pg-td",
            Self::Beam => "beam",
            Self::SamplingFiltering => "sf",
            Self::Smcg => "smcg",
        }
    }

    /// Whether the decoder consults public tests while generating.
    pub fn uses_tests(self) -> bool {
        !matches!(self, Self::Beam)
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg-td" => Ok(Self::PgTd),
            "beam" => Ok(Self::Beam),
            "sf" => Ok(Self::SamplingFiltering),
            "smcg" => Ok(Self::Smcg),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub search: SearchConfig,
    /// Beam width for the pure beam baseline.
    pub beam_width: usize,
    pub samples: usize,
    pub pop_size: usize,
    pub max_steps: usize,
    /// Generation budget per problem.
    pub max_generations: u64,
    pub reward: RewardSpec,
    pub seed: u64,
    /// Record up to this many programs per problem for n@k / pass@k.
    pub candidates: usize,
    /// Embed the per-rollout trace in each record (tree search only).
    pub record_traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PgTd,
            search: SearchConfig::default(),
            beam_width: 5,
            samples: 512,
            pop_size: 200,
            max_steps: DEFAULT_MAX_LEN,
            max_generations: 256,
            reward: RewardSpec::default(),
            seed: 0,
            candidates: 0,
            record_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub program: String,
    pub public_reward: f64,
    pub private_pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget_used: u64,
    pub best_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub problem_id: String,
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    pub best_program: Option<String>,
    pub best_tokens: Vec<usize>,
    /// Objective value on public tests (shaped if a shaped reward is used).
    pub public_reward: f64,
    pub public_pass_rate: f64,
    pub private_pass_rate: Option<f64>,
    pub strict_pass: bool,
    pub budget_used: u64,
    pub budget_exhausted: bool,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_stats: Option<CacheStats>,
    pub beam_calls: u64,
    pub topk_model_calls: u64,
    pub rollouts: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateRecord>,
    /// Best reward against generations used (anytime curve).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curve: Vec<CurvePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<RunTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ProblemRecord {
    pub fn empty(problem_id: &str, algorithm: &str) -> Self {
        Self {
            problem_id: problem_id.to_string(),
            algorithm: algorithm.to_string(),
            config: None,
            best_program: None,
            best_tokens: Vec::new(),
            public_reward: 0.0,
            public_pass_rate: 0.0,
            private_pass_rate: None,
            strict_pass: false,
            budget_used: 0,
            budget_exhausted: false,
            wall_ms: 0,
            cache_stats: None,
            beam_calls: 0,
            topk_model_calls: 0,
            rollouts: 0,
            candidates: Vec::new(),
            curve: Vec::new(),
            trace: None,
            error: None,
        }
    }

    pub fn samples(&self) -> ProblemSamples {
        self.candidates
            .iter()
            .map(|c| SampleResult {
                public_reward: c.public_reward,
                private_pass: c.private_pass,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub problems: usize,
    pub failures: usize,
    pub mean_public_reward: f64,
    pub mean_public_pass_rate: f64,
    pub pass_rate: Option<f64>,
    pub strict_accuracy: Option<f64>,
    pub total_budget_used: u64,
}

impl Aggregate {
    pub fn from_records(records: &[ProblemRecord]) -> Self {
        let n = records.len().max(1) as f64;
        Self {
            problems: records.len(),
            failures: records.iter().filter(|r| r.error.is_some()).count(),
            mean_public_reward: records.iter().map(|r| r.public_reward).sum::<f64>() / n,
            mean_public_pass_rate: records.iter().map(|r| r.public_pass_rate).sum::<f64>() / n,
            pass_rate: pass_rate_metric(records).ok(),
            strict_accuracy: strict_accuracy(records).ok(),
            total_budget_used: records.iter().map(|r| r.budget_used).sum(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ReportLine {
    Problem(Box<ProblemRecord>),
    Aggregate(Aggregate),
}

/// Per-problem records (sorted by problem id) plus aggregate metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub records: Vec<ProblemRecord>,
    pub aggregate: Aggregate,
}

impl RunReport {
    pub fn new(mut records: Vec<ProblemRecord>) -> Self {
        records.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
        let aggregate = Aggregate::from_records(&records);
        Self { records, aggregate }
    }

    /// True if the stored aggregate matches a recomputation from the records.
    pub fn is_consistent(&self) -> bool {
        Aggregate::from_records(&self.records) == self.aggregate
    }

    /// Zeroes wall-clock fields so two runs can be compared byte for byte.
    pub fn without_timing(mut self) -> Self {
        for r in &mut self.records {
            r.wall_ms = 0;
        }
        self
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, &ReportLine::Problem(Box::new(r.clone())))?;
            out.write_all(b"\n")?;
        }
        serde_json::to_writer(&mut out, &ReportLine::Aggregate(self.aggregate.clone()))?;
        out.write_all(b"\n")?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut aggregate = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            match serde_json::from_str::<ReportLine>(line).map_err(|e| Error::Parse(e.to_string()))? {
                ReportLine::Problem(r) => records.push(*r),
                ReportLine::Aggregate(a) => aggregate = Some(a),
            }
        }
        let aggregate = aggregate.ok_or_else(|| Error::Parse("report has no aggregate line".into()))?;
        Ok(Self { records, aggregate })
    }

    /// CSV of `problem_id,budget_used,best_reward` anytime curves.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("problem_id,budget_used,best_reward\n");
        for r in &self.records {
            for p in &r.curve {
                out.push_str(&format!("{},{},{}\n", r.problem_id, p.budget_used, p.best_reward));
            }
        }
        out
    }
}

struct Decoded {
    outcome: DecodeOutcome,
    cache: Option<CacheStats>,
    beam_calls: u64,
    topk_calls: u64,
    rollouts: u64,
    curve: Vec<CurvePoint>,
    trace: Option<RunTrace>,
}

fn decode_problem<M: TokenModel + ?Sized>(
    model: &M,
    reward: &TestReward,
    problem: &ProblemSpec,
    cfg: &ExperimentConfig,
    budget: &GenerationBudget,
) -> Result<Decoded> {
    let prompt = problem.id.as_str();
    let max_len = cfg.search.max_len;
    let mut rng = rng::stream(cfg.seed, &problem.id);
    let plain = |outcome: DecodeOutcome, beam_calls| {
        let curve = outcome
            .best
            .as_ref()
            .map(|b| CurvePoint {
                budget_used: budget.used(),
                best_reward: b.reward,
            })
            .into_iter()
            .collect();
        Decoded {
            outcome,
            cache: None,
            beam_calls,
            topk_calls: 0,
            rollouts: 0,
            curve,
            trace: None,
        }
    };
    Ok(match cfg.algorithm {
        Algorithm::PgTd => {
            let out = run_pgtd(model, reward, prompt, &cfg.search, budget)?;
            let curve = out
                .trace
                .iter()
                .map(|r| CurvePoint {
                    budget_used: r.budget_used,
                    best_reward: r.best_reward,
                })
                .collect();
            Decoded {
                outcome: DecodeOutcome {
                    best: out.best,
                    candidates: out.programs.entries().to_vec(),
                    budget_exhausted: out.budget_exhausted,
                },
                cache: Some(out.stats.cache),
                beam_calls: out.stats.beam_calls,
                topk_calls: out.stats.topk_model_calls,
                rollouts: out.stats.rollouts,
                curve,
                trace: cfg.record_traces.then_some(out.trace),
            }
        }
        Algorithm::Beam => {
            let out = pure_beam(model, reward, prompt, cfg.beam_width, max_len, budget)?;
            plain(out, 1)
        }
        Algorithm::SamplingFiltering => {
            let out = sampling_filtering(model, reward, prompt, cfg.samples, max_len, budget, &mut rng)?;
            plain(out, 0)
        }
        Algorithm::Smcg => {
            let out = smcg_td(model, reward, prompt, cfg.pop_size, cfg.max_steps, max_len, budget, &mut rng)?;
            plain(out.decode, out.beam_calls)
        }
    })
}

fn private_pass_rate(program: &str, problem: &ProblemSpec, executor: &dyn Executor) -> Result<Option<f64>> {
    if problem.private_tests.is_empty() {
        return Ok(None);
    }
    get_reward(program, &problem.private_tests, executor).map(Some)
}

/// Runs one problem; failures are recorded rather than propagated.
pub fn run_problem<M: TokenModel + ?Sized>(
    model: &M,
    executor: &Arc<dyn Executor>,
    problem: &ProblemSpec,
    cfg: &ExperimentConfig,
) -> ProblemRecord {
    let start = Instant::now();
    let budget = GenerationBudget::new(cfg.max_generations);
    let mut record = ProblemRecord::empty(&problem.id, cfg.algorithm.name());
    record.config = Some(cfg.clone());
    let result = (|| -> Result<()> {
        let reward = TestReward::new(problem.public_tests.clone(), Arc::clone(executor), cfg.reward)?;
        let decoded = decode_problem(model, &reward, problem, cfg, &budget)?;
        record.budget_exhausted = decoded.outcome.budget_exhausted;
        record.cache_stats = decoded.cache;
        record.beam_calls = decoded.beam_calls;
        record.topk_model_calls = decoded.topk_calls;
        record.rollouts = decoded.rollouts;
        record.curve = decoded.curve;
        record.trace = decoded.trace;
        if let Some(BestProgram {
            tokens,
            text,
            reward,
            pass_rate,
        }) = decoded.outcome.best
        {
            record.private_pass_rate = private_pass_rate(&text, problem, executor.as_ref())?;
            record.strict_pass = record.private_pass_rate == Some(1.0);
            record.best_program = Some(text);
            record.best_tokens = tokens;
            record.public_reward = reward;
            record.public_pass_rate = pass_rate;
        } else if !problem.private_tests.is_empty() {
            record.private_pass_rate = Some(0.0);
        }
        for (seq, eval) in decoded.outcome.candidates.iter().take(cfg.candidates) {
            record.candidates.push(candidate(model, seq, *eval, problem, executor.as_ref())?);
        }
        Ok(())
    })();
    if let Err(e) = result {
        record.error = Some(e.to_string());
    }
    record.budget_used = budget.used();
    record.wall_ms = start.elapsed().as_millis() as u64;
    record
}

fn candidate<M: TokenModel + ?Sized>(
    model: &M,
    seq: &SequenceState,
    eval: Evaluation,
    problem: &ProblemSpec,
    executor: &dyn Executor,
) -> Result<CandidateRecord> {
    let program = model.vocab().detokenize(seq.generated());
    let private_pass = private_pass_rate(&program, problem, executor)? == Some(1.0);
    Ok(CandidateRecord {
        program,
        public_reward: eval.reward,
        private_pass,
    })
}

/// Runs every problem (in parallel) and assembles a report ordered by problem id.
pub fn run_experiment<M: TokenModel + ?Sized>(
    problems: &[ProblemSpec],
    model: &M,
    executor: Arc<dyn Executor>,
    cfg: &ExperimentConfig,
) -> RunReport {
    let records = problems
        .par_iter()
        .map(|p| run_problem(model, &executor, p, cfg))
        .collect();
    RunReport::new(records)
}
