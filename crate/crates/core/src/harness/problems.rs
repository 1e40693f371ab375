use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::reward::{ProblemSpec, TestCase};

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Split a single `tests` list into public (first half, rounded up) and private.
    pub split_half: bool,
    /// Reject problems without public tests.
    pub require_public: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemLine {
    id: String,
    #[serde(default)]
    prompt: String,
    #[serde(default)]
    public_tests: Option<Vec<TestCase>>,
    #[serde(default)]
    private_tests: Option<Vec<TestCase>>,
    #[serde(default)]
    tests: Option<Vec<TestCase>>,
}

/// Public gets `ceil(n / 2)` tests, private the rest.
pub fn split_half(tests: Vec<TestCase>) -> (Vec<TestCase>, Vec<TestCase>) {
    let mut public = tests;
    let private = public.split_off(public.len().div_ceil(2));
    (public, private)
}

/// Parses a JSON-lines problem file. Blank lines are skipped.
pub fn parse_problems(text: &str, opts: LoadOptions) -> Result<Vec<ProblemSpec>> {
    let mut problems = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: ProblemLine = serde_json::from_str(line)
            .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
        let (public, private) = match (raw.public_tests, raw.private_tests, raw.tests) {
            (None, None, Some(all)) if opts.split_half => split_half(all),
            (None, None, Some(_)) => {
                return Err(Error::Parse(format!(
                    "line {}: problem {:?} has a single test list; use split-half mode",
                    lineno + 1,
                    raw.id
                )))
            }
            (public, private, None) => (public.unwrap_or_default(), private.unwrap_or_default()),
            _ => {
                return Err(Error::Parse(format!(
                    "line {}: problem {:?} mixes `tests` with public/private lists",
                    lineno + 1,
                    raw.id
                )))
            }
        };
        if let Some(t) = public.iter().find(|t| private.contains(t)) {
            return Err(Error::Parse(format!(
                "problem {:?}: test with input {:?} is both public and private",
                raw.id, t.input
            )));
        }
        if opts.require_public && public.is_empty() {
            return Err(Error::EmptyInput(format!("problem {:?} has no public tests", raw.id)));
        }
        problems.push(ProblemSpec {
            id: raw.id,
            prompt: raw.prompt,
            public_tests: public,
            private_tests: private,
        });
    }
    Ok(problems)
}

pub fn load_problems(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Vec<ProblemSpec>> {
    parse_problems(&std::fs::read_to_string(path)?, opts)
}
