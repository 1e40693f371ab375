//! Generator for the bundled synthetic problem suite.
//!
//! Each problem has its own trie corpus (keyed by problem id) over the
//! vocabulary `a b c d <end>` and a mock judge table. One target program
//! passes every test. Near-miss programs share a prefix with the target and
//! pass some tests. On deceptive problems a high-count decoy that passes
//! nothing dominates the likelihood, so likelihood-only decoding fails.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::{CorpusEntry, TrieFile, TrieModel};
use crate::model::Vocabulary;
use crate::reward::{program_hash, MockEntry, MockTable};
use crate::reward::{ProblemSpec, TestCase};

pub const SUITE_SEED: u64 = 0x5eed_0064;
pub const SUITE_SIZE: usize = 20;
pub const SUITE_MAX_LEN: usize = 6;
pub const DECEPTIVE_PROMPT: &str = "deceptive";
pub const PLAIN_PROMPT: &str = "plain";

const LETTERS: [&str; 4] = ["a", "b", "c", "d"];
const TERMINAL: &str = "<end>";
const TESTS_PER_SIDE: usize = 4;

#[derive(Debug, Clone)]
pub struct SyntheticSuite {
    pub problems: Vec<ProblemSpec>,
    pub model: TrieFile,
    pub mock: MockTable,
    /// Program passing every test, per problem id.
    pub targets: BTreeMap<String, String>,
}

impl SyntheticSuite {
    pub fn deceptive_ids(&self) -> Vec<&str> {
        self.problems
            .iter()
            .filter(|p| p.prompt == DECEPTIVE_PROMPT)
            .map(|p| p.id.as_str())
            .collect()
    }

    pub fn trie(&self) -> Result<TrieModel> {
        TrieModel::from_file(&self.model)
    }

    pub fn problems_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.problems {
            out.push_str(&serde_json::to_string(p).expect("problem serializes"));
            out.push('\n');
        }
        out
    }

    pub fn model_json(&self) -> String {
        serde_json::to_string_pretty(&self.model).expect("trie serializes") + "\n"
    }

    pub fn mock_json(&self) -> String {
        serde_json::to_string_pretty(&self.mock).expect("mock serializes") + "\n"
    }

    /// Writes `model.json`, `problems.jsonl` and `mock.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("model.json"), self.model_json())?;
        std::fs::write(dir.join("problems.jsonl"), self.problems_jsonl())?;
        std::fs::write(dir.join("mock.json"), self.mock_json())?;
        Ok(())
    }
}

fn random_program(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<&'static str> {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| LETTERS[rng.random_range(0..4)]).collect()
}

fn expected(id: &str, input: usize) -> String {
    format!("{id}:{}", input * input + 1)
}

struct Builder {
    id: String,
    corpus: Vec<(Vec<&'static str>, u64)>,
    /// program -> indices of tests (0..8) it passes
    passes: BTreeMap<String, Vec<usize>>,
}

impl Builder {
    fn add(&mut self, program: Vec<&'static str>, count: u64, passes: Vec<usize>) {
        let text = program.concat();
        if self.passes.contains_key(&text) {
            return;
        }
        self.passes.insert(text, passes);
        self.corpus.push((program, count));
    }

    fn trie(&self, vocab: &Vocabulary) -> Result<TrieModel> {
        let mut m = TrieModel::new(vocab.clone());
        for (prog, count) in &self.corpus {
            let mut ids: Vec<usize> = prog.iter().map(|t| vocab.lookup(t)).collect::<Result<_>>()?;
            ids.push(vocab.terminal());
            m.add_sequence(Some(&self.id), &ids, *count)?;
        }
        Ok(m)
    }
}

/// True if every step of `target` is among the top-3 next tokens.
fn reachable_in_top3(model: &TrieModel, vocab: &Vocabulary, prompt: &str, target: &[&str]) -> Result<bool> {
    let mut state = vocab.root(prompt);
    let ids = target
        .iter()
        .map(|t| vocab.lookup(t))
        .chain(std::iter::once(Ok(vocab.terminal())))
        .collect::<Result<Vec<_>>>()?;
    for id in ids {
        let top = crate::model::top_k(model, &state, 3)?;
        if !top.iter().any(|&(t, p)| t == id && p > 0.0) {
            return Ok(false);
        }
        state.push(id)?;
    }
    Ok(true)
}

fn build_problem(rng: &mut ChaCha8Rng, vocab: &Vocabulary, index: usize, deceptive: bool) -> Result<Builder> {
    let id = format!("syn-{index:02}");
    loop {
        let mut b = Builder {
            id: id.clone(),
            corpus: Vec::new(),
            passes: BTreeMap::new(),
        };
        let target = random_program(rng, 4, SUITE_MAX_LEN);
        let all: Vec<usize> = (0..2 * TESTS_PER_SIDE).collect();
        let target_count = if deceptive { 6 } else { 40 };
        b.add(target.clone(), target_count, all);

        // Near misses: keep a prefix of the target, then diverge.
        for keep in 1..target.len() {
            let mut prog = target[..keep].to_vec();
            prog.extend(random_program(rng, 1, SUITE_MAX_LEN - keep));
            let m = (TESTS_PER_SIDE * keep / target.len()).min(TESTS_PER_SIDE - 1);
            let passes = (0..m).chain(TESTS_PER_SIDE..TESTS_PER_SIDE + m).collect();
            b.add(prog, rng.random_range(2..6), passes);
        }
        // Unrelated distractors with a few accidental passes.
        for _ in 0..3 {
            let prog = random_program(rng, 1, SUITE_MAX_LEN);
            let m = rng.random_range(0..2);
            b.add(prog, rng.random_range(3..12), (0..m).collect());
        }
        if deceptive {
            // Decoy starts with a different letter and passes nothing.
            let mut decoy = random_program(rng, 2, SUITE_MAX_LEN);
            while decoy[0] == target[0] {
                decoy[0] = LETTERS[rng.random_range(0..4)];
            }
            b.add(decoy, 80, Vec::new());
        }
        let model = b.trie(vocab)?;
        if reachable_in_top3(&model, vocab, &id, &target)? {
            return Ok(b);
        }
    }
}

/// Deterministically generates the suite from `seed`.
pub fn generate(seed: u64) -> Result<SyntheticSuite> {
    let mut tokens: Vec<&str> = LETTERS.to_vec();
    tokens.push(TERMINAL);
    let vocab = Vocabulary::new(tokens.clone(), TERMINAL)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut problems = Vec::new();
    let mut corpus = Vec::new();
    let mut entries = Vec::new();
    let mut targets = BTreeMap::new();
    for i in 0..SUITE_SIZE {
        let deceptive = i % 5 < 2;
        let b = build_problem(&mut rng, &vocab, i, deceptive)?;
        let tests: Vec<TestCase> = (0..2 * TESTS_PER_SIDE)
            .map(|t| TestCase {
                input: t.to_string(),
                output: expected(&b.id, t),
            })
            .collect();
        let (target, _) = &b.corpus[0];
        targets.insert(b.id.clone(), target.concat());
        for (prog, count) in &b.corpus {
            let mut toks: Vec<String> = prog.iter().map(|s| s.to_string()).collect();
            toks.push(TERMINAL.to_string());
            corpus.push(CorpusEntry {
                tokens: toks,
                count: *count,
                prompt_id: Some(b.id.clone()),
            });
        }
        for (prog, passes) in &b.passes {
            let hash = program_hash(prog);
            for &t in passes {
                entries.push(MockEntry {
                    program_hash: Some(hash.clone()),
                    program: None,
                    input: t.to_string(),
                    verdict: "passed".into(),
                    stdout: expected(&b.id, t),
                });
            }
        }
        let mut public = tests;
        let private = public.split_off(TESTS_PER_SIDE);
        problems.push(ProblemSpec {
            id: b.id.clone(),
            prompt: if deceptive { DECEPTIVE_PROMPT } else { PLAIN_PROMPT }.to_string(),
            public_tests: public,
            private_tests: private,
        });
    }
    Ok(SyntheticSuite {
        problems,
        model: TrieFile {
            vocab: tokens.iter().map(|s| s.to_string()).collect(),
            terminal: TERMINAL.to_string(),
            corpus,
        },
        mock: MockTable { entries },
        targets,
    })
}

/// Bundled suite, generated with [`SUITE_SEED`].
pub fn suite() -> SyntheticSuite {
    generate(SUITE_SEED).expect("bundled suite parameters are valid")
}
