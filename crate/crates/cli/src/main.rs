use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use plandec::harness::oracle::brute_force_oracle;
use plandec::harness::{self, synthetic, LoadOptions, ProblemSamples};
use plandec::model::{load_model, ModelKind, TokenModel};
use plandec::reward::{Executor, ExecutorConfig, MockExecutor, ProcessExecutor, TestReward};
use plandec::{Algorithm, ExperimentConfig, RewardKind, RewardSpec, RunReport, SearchConfig};

#[derive(Parser)]
#[command(name = "plandec", version, about = "Planning-guided decoding over next-token models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every problem in a problem file and write a JSON-lines report.
    Solve(SolveArgs),
    /// Exhaustively find the best program per problem (tiny vocabularies only).
    Oracle(OracleArgs),
    /// Recompute metrics from a report.
    Metrics(MetricsArgs),
    /// Write the bundled synthetic suite (model, problems, mock judge table).
    GenSuite(GenSuiteArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    #[value(name = "pg-td")]
    PgTd,
    Beam,
    Sf,
    Smcg,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKindArg {
    Table,
    Trie,
    Uniform,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecutorArg {
    Process,
    Mock,
}

#[derive(Clone, Copy, ValueEnum)]
enum RewardArg {
    Pass,
    Length,
    Comment,
}

#[derive(Args)]
struct ProblemInputs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    model_kind: ModelKindArg,
    #[arg(long)]
    problems: PathBuf,
    /// Split a single `tests` list into public and private halves.
    #[arg(long)]
    split_half: bool,
    #[arg(long, value_enum, default_value = "process")]
    executor: ExecutorArg,
    /// Executor config JSON (process) or judge table JSON (mock).
    #[arg(long)]
    executor_config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "pass")]
    reward: RewardArg,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    inputs: ProblemInputs,
    #[arg(long, value_enum, default_value = "pg-td")]
    algorithm: AlgorithmArg,
    #[arg(long, default_value_t = 4.0)]
    c: f64,
    #[arg(long, default_value_t = 10.0)]
    c_base: f64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Beam width for tree-search completions.
    #[arg(long, default_value_t = 1)]
    b: usize,
    /// Beam width for the plain beam decoder.
    #[arg(long, default_value_t = 5)]
    beam_width: usize,
    #[arg(long, default_value_t = 256)]
    max_rollouts: usize,
    #[arg(long, default_value_t = 256)]
    max_generations: u64,
    #[arg(long, default_value_t = 512)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    pop_size: usize,
    /// Population steps for smcg (defaults to max-len).
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = plandec::decode::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long)]
    no_tree_cache: bool,
    #[arg(long)]
    no_seq_cache: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep this many programs per problem for n@k / pass@k.
    #[arg(long, default_value_t = 0)]
    candidates: usize,
    #[arg(long)]
    traces: bool,
    /// Zero wall-clock fields so identical runs give identical bytes.
    #[arg(long)]
    no_timing: bool,
    /// Report path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write best-reward-vs-budget curves as CSV.
    #[arg(long)]
    curve_csv: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    inputs: ProblemInputs,
    #[arg(long)]
    max_len: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct GenSuiteArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = synthetic::SUITE_SEED)]
    seed: u64,
}

fn model_kind(arg: ModelKindArg) -> ModelKind {
    match arg {
        ModelKindArg::Table => ModelKind::Table,
        ModelKindArg::Trie => ModelKind::Trie,
        ModelKindArg::Uniform => ModelKind::Uniform,
        ModelKindArg::Remote => ModelKind::Remote,
    }
}

fn reward_spec(arg: RewardArg) -> RewardSpec {
    RewardSpec::new(match arg {
        RewardArg::Pass => RewardKind::PassRate,
        RewardArg::Length => RewardKind::LengthPenalty,
        RewardArg::Comment => RewardKind::CommentEncouragement,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn executor(inputs: &ProblemInputs) -> Result<Arc<dyn Executor>> {
    Ok(match inputs.executor {
        ExecutorArg::Mock => {
            let path = inputs
                .executor_config
                .as_ref()
                .context("--executor mock needs --executor-config <judge table>")?;
            Arc::new(MockExecutor::from_json(&read(path)?)?)
        }
        ExecutorArg::Process => {
            let config = match &inputs.executor_config {
                Some(path) => ExecutorConfig::from_json(&read(path)?)?,
                None => ExecutorConfig::default(),
            };
            Arc::new(ProcessExecutor::new(config.with_env_override())?)
        }
    })
}

struct Loaded {
    model: Box<dyn TokenModel>,
    problems: Vec<plandec::ProblemSpec>,
    executor: Arc<dyn Executor>,
}

fn load(inputs: &ProblemInputs) -> Result<Loaded> {
    let model = load_model(&inputs.model, model_kind(inputs.model_kind))
        .with_context(|| format!("loading model {}", inputs.model.display()))?;
    let opts = LoadOptions {
        split_half: inputs.split_half,
        require_public: true,
    };
    let problems = harness::load_problems(&inputs.problems, opts)
        .with_context(|| format!("loading problems {}", inputs.problems.display()))?;
    Ok(Loaded {
        model,
        problems,
        executor: executor(inputs)?,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn solve(args: SolveArgs) -> Result<()> {
    let loaded = load(&args.inputs)?;
    let algorithm = match args.algorithm {
        AlgorithmArg::PgTd => Algorithm::PgTd,
        AlgorithmArg::Beam => Algorithm::Beam,
        AlgorithmArg::Sf => Algorithm::SamplingFiltering,
        AlgorithmArg::Smcg => Algorithm::Smcg,
    };
    let search = SearchConfig {
        c: args.c,
        c_base: args.c_base,
        k: args.k,
        b: args.b,
        max_rollouts: args.max_rollouts,
        max_len: args.max_len,
        tree_cache: !args.no_tree_cache,
        seq_cache: !args.no_seq_cache,
        seed: args.seed,
    };
    search.validate()?;
    let config = ExperimentConfig {
        algorithm,
        search,
        beam_width: args.beam_width,
        samples: args.samples,
        pop_size: args.pop_size,
        max_steps: args.max_steps.unwrap_or(args.max_len),
        max_generations: args.max_generations,
        reward: reward_spec(args.inputs.reward),
        seed: args.seed,
        candidates: args.candidates,
        record_traces: args.traces,
    };
    let mut report = harness::run_experiment(&loaded.problems, loaded.model.as_ref(), loaded.executor, &config);
    if args.no_timing {
        report = report.without_timing();
    }
    for r in &report.records {
        if let Some(e) = &r.error {
            log::error!("{}: {e}", r.problem_id);
        }
    }
    let mut out = output(args.out.as_deref())?;
    report.write_jsonl(&mut out)?;
    out.flush()?;
    if let Some(path) = &args.curve_csv {
        std::fs::write(path, report.curve_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let a = &report.aggregate;
    log::info!(
        "{} problems, {} failed, mean public reward {:.4}, strict accuracy {:?}",
        a.problems,
        a.failures,
        a.mean_public_reward,
        a.strict_accuracy
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let loaded = load(&args.inputs)?;
    let mut out = output(None)?;
    for p in &loaded.problems {
        let reward = TestReward::new(
            p.public_tests.clone(),
            Arc::clone(&loaded.executor),
            reward_spec(args.inputs.reward),
        )?;
        let best = brute_force_oracle(loaded.model.vocab(), &reward, &p.id, args.max_len)
            .with_context(|| format!("oracle for {}", p.id))?;
        let line = serde_json::json!({
            "problem_id": p.id,
            "reward": best.reward,
            "program": loaded.model.vocab().detokenize(best.sequence.generated()),
            "tokens": best.sequence.generated(),
            "evaluated": best.evaluated,
        });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn metrics(args: MetricsArgs) -> Result<()> {
    let report = RunReport::from_jsonl(&read(&args.report)?)?;
    if !report.is_consistent() {
        log::warn!("aggregate line does not match the problem records; using recomputed values");
    }
    let mut result = serde_json::json!({
        "problems": report.records.len(),
        "pass_rate": harness::pass_rate_metric(&report.records).ok(),
        "strict_accuracy": harness::strict_accuracy(&report.records).ok(),
    });
    if let Some(k) = args.k {
        let samples: Vec<ProblemSamples> = report.records.iter().map(|r| r.samples()).collect();
        if let Some(short) = report.records.iter().find(|r| r.candidates.len() < k) {
            log::warn!(
                "{} has {} recorded programs, fewer than k = {k}",
                short.problem_id,
                short.candidates.len()
            );
        }
        result["k"] = k.into();
        result["pass_at_k"] = harness::pass_at_k(&samples, k)?.into();
        if let Some(n) = args.n {
            result["n"] = n.into();
            result["n_at_k"] = harness::n_at_k(&samples, n, k)?.into();
        }
    } else if args.n.is_some() {
        bail!("--n needs --k");
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

fn gen_suite(args: GenSuiteArgs) -> Result<()> {
    let suite = synthetic::generate(args.seed)?;
    suite.write_to(&args.out_dir)?;
    eprintln!(
        "wrote {} problems ({} deceptive) to {}",
        suite.problems.len(),
        suite.deceptive_ids().len(),
        args.out_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Solve(a) => solve(a),
        Command::Oracle(a) => oracle(a),
        Command::Metrics(a) => metrics(a),
        Command::GenSuite(a) => gen_suite(a),
    }
}
