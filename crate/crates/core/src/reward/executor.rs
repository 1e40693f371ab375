use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wait_timeout::ChildExt;

use super::TestCase;
use crate::error::{Error, Result};

/// Environment variable that overrides the interpreter command.
pub const EXECUTOR_CMD_ENV: &str = "PLANDEC_EXECUTOR_CMD";

/// Judge verdict for one program on one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Passed,
    WrongOutput,
    CompileError,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub verdict: Verdict,
    pub stdout: String,
    pub elapsed_ms: u64,
}

/// How a raw run ended, before output comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Exited normally; output still has to be compared.
    Exited,
    CompileError,
    RuntimeError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRun {
    pub status: RunStatus,
    pub stdout: String,
    pub elapsed_ms: u64,
}

/// Runs candidate programs.
pub trait Executor: Send + Sync {
    /// Returns `Some` with a compile-error run if the program is rejected
    /// before execution, `None` if it may run.
    fn check(&self, program: &str) -> Result<Option<RawRun>>;

    fn run(&self, program: &str, input: &str) -> Result<RawRun>;
}

/// Trims trailing whitespace on each line and drops trailing blank lines.
pub fn normalize_output(s: &str) -> String {
    let mut lines: Vec<&str> = s.split('\n').map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Runs one test and classifies the result.
pub fn execute<E: Executor + ?Sized>(executor: &E, program: &str, test: &TestCase) -> Result<ExecutionOutcome> {
    let raw = executor.run(program, &test.input)?;
    Ok(classify(raw, &test.output))
}

pub(crate) fn classify(raw: RawRun, expected: &str) -> ExecutionOutcome {
    let verdict = match raw.status {
        RunStatus::Exited if normalize_output(&raw.stdout) == normalize_output(expected) => Verdict::Passed,
        RunStatus::Exited => Verdict::WrongOutput,
        RunStatus::CompileError => Verdict::CompileError,
        RunStatus::RuntimeError => Verdict::RuntimeError,
        RunStatus::Timeout => Verdict::Timeout,
    };
    ExecutionOutcome {
        verdict,
        stdout: raw.stdout,
        elapsed_ms: raw.elapsed_ms,
    }
}

/// Lowercase hex SHA-256 of the program text; the key used by mock tables.
pub fn program_hash(program: &str) -> String {
    Sha256::digest(program.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    /// SHA-256 of the program text. Either this or `program` must be set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default)]
    pub input: String,
    pub verdict: String,
    #[serde(default)]
    pub stdout: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockTable {
    pub entries: Vec<MockEntry>,
}

/// Table-driven executor for deterministic tests.
///
/// An entry with verdict `passed` (or `ok`, `wrong_output`) means the program
/// ran and printed `stdout`; the judge still compares it with the expected
/// output. A `compile_error` entry rejects the program for every input.
/// Unlisted `(program, input)` pairs run and print nothing.
#[derive(Debug, Clone, Default)]
pub struct MockExecutor {
    runs: HashMap<(String, String), RawRun>,
    rejected: HashSet<String>,
}

impl MockExecutor {
    pub fn new(table: &MockTable) -> Result<Self> {
        let mut exec = Self::default();
        for e in &table.entries {
            let hash = match (&e.program_hash, &e.program) {
                (Some(h), _) => h.to_lowercase(),
                (None, Some(p)) => program_hash(p),
                (None, None) => return Err(Error::Parse("mock entry needs program_hash or program".into())),
            };
            let status = match e.verdict.as_str() {
                "passed" | "ok" | "wrong_output" => RunStatus::Exited,
                "runtime_error" => RunStatus::RuntimeError,
                "timeout" => RunStatus::Timeout,
                "compile_error" => {
                    exec.rejected.insert(hash);
                    continue;
                }
                other => return Err(Error::Parse(format!("unknown mock verdict {other:?}"))),
            };
            exec.runs.insert(
                (hash, e.input.clone()),
                RawRun {
                    status,
                    stdout: e.stdout.clone(),
                    elapsed_ms: 0,
                },
            );
        }
        Ok(exec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: MockTable = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(&table)
    }
}

impl Executor for MockExecutor {
    fn check(&self, program: &str) -> Result<Option<RawRun>> {
        Ok(self.rejected.contains(&program_hash(program)).then(|| RawRun {
            status: RunStatus::CompileError,
            stdout: String::new(),
            elapsed_ms: 0,
        }))
    }

    fn run(&self, program: &str, input: &str) -> Result<RawRun> {
        let key = (program_hash(program), input.to_string());
        Ok(self.runs.get(&key).cloned().unwrap_or(RawRun {
            status: RunStatus::Exited,
            stdout: String::new(),
            elapsed_ms: 0,
        }))
    }
}

/// Process executor settings. `{file}` in a command is replaced by the path
/// of a temporary file holding the program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutorConfig {
    pub command: Vec<String>,
    /// Optional syntax check run once per program before any test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compile_command: Option<Vec<String>>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_output")]
    pub max_output_bytes: usize,
}

fn default_timeout_ms() -> u64 {
    2000
}

fn default_max_output() -> usize {
    1 << 20
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            command: vec!["python3".into(), "{file}".into()],
            compile_command: Some(
                ["python3", "-m", "py_compile", "{file}"].map(String::from).to_vec(),
            ),
            timeout_ms: default_timeout_ms(),
            max_output_bytes: default_max_output(),
        }
    }
}

impl ExecutorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Replaces `command` with `$PLANDEC_EXECUTOR_CMD` when it is set.
    pub fn with_env_override(mut self) -> Self {
        if let Ok(cmd) = std::env::var(EXECUTOR_CMD_ENV) {
            let parts: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if !parts.is_empty() {
                self.command = parts;
            }
        }
        self
    }
}

/// Runs programs as child processes under a wall-clock timeout and an output cap.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    config: ExecutorConfig,
}

impl ProcessExecutor {
    pub fn new(config: ExecutorConfig) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::InvalidArgument("executor command is empty".into()));
        }
        Ok(Self { config })
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    fn spawn(&self, argv: &[String], program: &str, input: Option<&str>) -> Result<RawRun> {
        let mut file = tempfile::Builder::new().prefix("plandec-").suffix(".py").tempfile()?;
        file.write_all(program.as_bytes())?;
        file.flush()?;
        let path = file.path().to_string_lossy().into_owned();
        let argv: Vec<String> = argv.iter().map(|a| a.replace("{file}", &path)).collect();

        let start = Instant::now();
        let mut child = Command::new(&argv[0])
            .args(&argv[1..])
            .stdin(if input.is_some() { Stdio::piped() } else { Stdio::null() })
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| Error::Infrastructure(format!("cannot start {:?}: {e}", argv[0])))?;

        if let (Some(mut stdin), Some(input)) = (child.stdin.take(), input) {
            let input = input.to_string();
            // Broken pipes are expected when the program ignores its input.
            thread::spawn(move || {
                let _ = stdin.write_all(input.as_bytes());
            });
        }
        let cap = self.config.max_output_bytes;
        let mut stdout = child.stdout.take().expect("stdout piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            let n = (&mut stdout).take(cap as u64 + 1).read_to_end(&mut buf);
            // keep draining so the child never blocks on a full pipe
            let _ = std::io::copy(&mut stdout, &mut std::io::sink());
            (buf, n.is_ok())
        });

        let limit = Duration::from_millis(self.config.timeout_ms);
        let status = match child.wait_timeout(limit)? {
            Some(status) => Some(status),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                None
            }
        };
        let elapsed_ms = start.elapsed().as_millis() as u64;
        let (buf, _) = reader.join().unwrap_or_default();
        let overflow = buf.len() > cap;
        let stdout = String::from_utf8_lossy(&buf[..buf.len().min(cap)]).into_owned();
        let status = match status {
            None => RunStatus::Timeout,
            Some(_) if overflow => RunStatus::RuntimeError,
            Some(s) if s.success() => RunStatus::Exited,
            Some(_) => RunStatus::RuntimeError,
        };
        Ok(RawRun {
            status,
            stdout,
            elapsed_ms,
        })
    }
}

impl Executor for ProcessExecutor {
    fn check(&self, program: &str) -> Result<Option<RawRun>> {
        let Some(cmd) = &self.config.compile_command else {
            return Ok(None);
        };
        let run = self.spawn(cmd, program, None)?;
        Ok((run.status != RunStatus::Exited).then_some(RawRun {
            status: RunStatus::CompileError,
            ..run
        }))
    }

    fn run(&self, program: &str, input: &str) -> Result<RawRun> {
        self.spawn(&self.config.command, program, Some(input))
    }
}
