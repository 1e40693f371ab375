//! Comparison decoders: plain beam search, sampling followed by test
//! filtering, and a sequential Monte-Carlo population search.

use std::collections::HashMap;

use rand::Rng;

use crate::cache::SequenceCache;
use crate::decode::{beam_search, sample_from_top, sample_topk, sample_weighted, GenerationBudget};
use crate::error::{Error, Result};
use crate::model::{SequenceState, TokenId, TokenModel};
use crate::reward::{Evaluation, RewardFn};
use crate::search::BestProgram;

/// Tokens considered at each sampling step of [`sampling_filtering`].
pub const SAMPLING_TOP_K: usize = 3;

/// Output shared by the baseline decoders.
#[derive(Debug, Clone)]
pub struct DecodeOutcome {
    pub best: Option<BestProgram>,
    /// Every distinct program scored, in generation order.
    pub candidates: Vec<(SequenceState, Evaluation)>,
    pub budget_exhausted: bool,
}

/// Scores programs once each and remembers the order they were first seen.
struct Scoreboard<'a, M: ?Sized, R: ?Sized> {
    model: &'a M,
    reward: &'a R,
    seen: HashMap<Vec<TokenId>, usize>,
    candidates: Vec<(SequenceState, Evaluation)>,
}

impl<'a, M: TokenModel + ?Sized, R: RewardFn + ?Sized> Scoreboard<'a, M, R> {
    fn new(model: &'a M, reward: &'a R) -> Self {
        Self {
            model,
            reward,
            seen: HashMap::new(),
            candidates: Vec::new(),
        }
    }

    fn score(&mut self, program: &SequenceState) -> Result<Evaluation> {
        if let Some(&i) = self.seen.get(program.generated()) {
            return Ok(self.candidates[i].1);
        }
        let eval = self
            .reward
            .evaluate(&self.model.vocab().detokenize(program.generated()))?;
        self.seen.insert(program.generated().to_vec(), self.candidates.len());
        self.candidates.push((program.clone(), eval));
        Ok(eval)
    }

    fn to_best(&self, program: &SequenceState, eval: Evaluation) -> BestProgram {
        BestProgram {
            tokens: program.generated().to_vec(),
            text: self.model.vocab().detokenize(program.generated()),
            reward: eval.reward,
            pass_rate: eval.pass_rate,
        }
    }

    fn finish(self, best: Option<(SequenceState, Evaluation)>, budget_exhausted: bool) -> DecodeOutcome {
        DecodeOutcome {
            best: best.map(|(p, e)| self.to_best(&p, e)),
            candidates: self.candidates,
            budget_exhausted,
        }
    }
}

fn argmax_earliest(scored: impl IntoIterator<Item = (SequenceState, Evaluation)>) -> Option<(SequenceState, Evaluation)> {
    scored
        .into_iter()
        .reduce(|best, e| if e.1.reward > best.1.reward { e } else { best })
}

/// One beam search call from the prompt. The reward is computed for
/// reporting only; it plays no part in choosing the program.
pub fn pure_beam<M: TokenModel + ?Sized, R: RewardFn + ?Sized>(
    model: &M,
    reward: &R,
    prompt: &str,
    b: usize,
    max_len: usize,
    budget: &GenerationBudget,
) -> Result<DecodeOutcome> {
    let mut board = Scoreboard::new(model, reward);
    let out = match beam_search(model, &model.vocab().root(prompt), b, max_len, budget) {
        Ok(out) => out,
        Err(Error::BudgetExhausted { .. }) => return Ok(board.finish(None, true)),
        Err(e) => return Err(e),
    };
    let eval = board.score(&out.sequence)?;
    Ok(board.finish(Some((out.sequence, eval)), false))
}

/// Draws `sample_num` programs with top-3 sampling at temperature 1, then
/// returns the one with the best reward (earliest on ties).
pub fn sampling_filtering<M: TokenModel + ?Sized, R: RewardFn + ?Sized, G: Rng + ?Sized>(
    model: &M,
    reward: &R,
    prompt: &str,
    sample_num: usize,
    max_len: usize,
    budget: &GenerationBudget,
    rng: &mut G,
) -> Result<DecodeOutcome> {
    if sample_num == 0 {
        return Err(Error::InvalidArgument("sample_num must be >= 1".into()));
    }
    let root = model.vocab().root(prompt);
    let mut samples = Vec::with_capacity(sample_num);
    let mut exhausted = false;
    for _ in 0..sample_num {
        match sample_topk(model, &root, SAMPLING_TOP_K, 1.0, max_len, budget, rng) {
            Ok(s) => samples.push(s.sequence),
            Err(Error::BudgetExhausted { .. }) => {
                exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut board = Scoreboard::new(model, reward);
    let mut scored = Vec::with_capacity(samples.len());
    for s in samples {
        let eval = board.score(&s)?;
        scored.push((s, eval));
    }
    Ok(board.finish(argmax_earliest(scored), exhausted))
}

/// A weighted set of partial programs.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// Partial program and its log-probability under the model.
    pub members: Vec<(SequenceState, f64)>,
    pub fitness: Vec<f64>,
}

impl Population {
    pub fn uniform(root: SequenceState, size: usize) -> Self {
        Self {
            members: vec![(root, 0.0); size],
            fitness: vec![1.0 / size as f64; size],
        }
    }

    /// Normalizes raw scores into a distribution; all-zero scores become uniform.
    pub fn normalize(raw: &[f64]) -> Vec<f64> {
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|r| r / total).collect()
        } else {
            vec![1.0 / raw.len() as f64; raw.len()]
        }
    }

    pub fn is_valid(&self) -> bool {
        self.members.len() == self.fitness.len()
            && (self.fitness.is_empty()
                || (self.fitness.iter().all(|f| *f >= 0.0)
                    && (self.fitness.iter().sum::<f64>() - 1.0).abs() <= 1e-9))
    }
}

/// Bookkeeping for one generation of [`smcg_td`].
#[derive(Debug, Clone, PartialEq)]
pub struct SmcgStep {
    pub population: usize,
    pub next_population: usize,
    pub completions: usize,
    pub fitness_valid: bool,
}

#[derive(Debug, Clone)]
pub struct SmcgOutcome {
    pub decode: DecodeOutcome,
    pub steps: Vec<SmcgStep>,
    pub beam_calls: u64,
    pub seq_cache_hits: u64,
}

/// Sequential Monte-Carlo search.
///
/// Each step resamples parents by fitness, extends each by one token drawn
/// from the model, harvests sequences that just ended, and scores the rest
/// by the reward of their greedy completion (served from a sequence cache
/// when possible). Returns the best harvested program.
#[allow(clippy::too_many_arguments)]
pub fn smcg_td<M: TokenModel + ?Sized, R: RewardFn + ?Sized, G: Rng + ?Sized>(
    model: &M,
    reward: &R,
    prompt: &str,
    pop_size: usize,
    max_steps: usize,
    max_len: usize,
    budget: &GenerationBudget,
    rng: &mut G,
) -> Result<SmcgOutcome> {
    if pop_size == 0 {
        return Err(Error::InvalidArgument("pop_size must be >= 1".into()));
    }
    let vocab_len = model.vocab().len();
    let mut board = Scoreboard::new(model, reward);
    let mut cache = SequenceCache::new();
    let mut population = Population::uniform(model.vocab().root(prompt), pop_size);
    let mut complete: Vec<(SequenceState, Evaluation)> = Vec::new();
    let mut steps = Vec::new();
    let mut beam_calls = 0;
    let mut exhausted = false;

    let mut t = 0;
    'outer: while !population.members.is_empty() && t < max_steps {
        let parents: Vec<(TokenId, f64)> = population.fitness.iter().copied().enumerate().collect();
        let mut next = Vec::new();
        let mut raw = Vec::new();
        let mut completions = 0;
        for _ in 0..population.members.len() {
            let (parent, parent_ll) = &population.members[sample_weighted(&parents, rng)?];
            let (token, p) = if parent.program_len() >= max_len {
                (parent.terminal(), 1.0)
            } else {
                let dist = model.next_distribution(parent)?;
                let tok = sample_from_top(&dist, vocab_len, 1.0, rng)?;
                (tok, dist.prob(tok))
            };
            let child = parent.child(token)?;
            let child_ll = parent_ll + p.ln();
            if child.is_complete() {
                completions += 1;
                let eval = board.score(&child)?;
                complete.push((child, eval));
                continue;
            }
            let hit = cache.lookup(&child).map(|c| c.sequence.clone());
            let completed = match hit {
                Some(seq) => seq,
                None => match beam_search(model, &child, 1, max_len, budget) {
                    Ok(out) => {
                        beam_calls += 1;
                        let eval = board.score(&out.sequence)?;
                        cache.insert(out.sequence.clone(), eval.reward, child_ll + out.log_prob)?;
                        out.sequence
                    }
                    Err(Error::BudgetExhausted { .. }) => {
                        exhausted = true;
                        break 'outer;
                    }
                    Err(e) => return Err(e),
                },
            };
            raw.push(board.score(&completed)?.reward);
            next.push((child, child_ll));
        }
        let fitness = Population::normalize(&raw);
        let prev = population.members.len();
        population = Population { members: next, fitness };
        steps.push(SmcgStep {
            population: prev,
            next_population: population.members.len(),
            completions,
            fitness_valid: population.is_valid(),
        });
        t += 1;
    }

    let seq_cache_hits = cache.hits();
    let best = argmax_earliest(complete);
    Ok(SmcgOutcome {
        decode: board.finish(best, exhausted),
        steps,
        beam_calls,
        seq_cache_hits,
    })
}
