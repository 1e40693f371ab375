#![allow(dead_code)]

use std::collections::HashMap;

use plandec::model::TableModel;
use plandec::reward::TableReward;
use plandec::{SequenceState, TokenId, Vocabulary};
use rand::Rng;

pub const LETTERS: [&str; 4] = ["a", "b", "c", "d"];

/// Small table model with a row for every reachable prefix, plus a table reward.
pub struct Instance {
    pub model: TableModel,
    pub reward: TableReward,
    pub max_len: usize,
    pub complete: Vec<Vec<TokenId>>,
}

pub fn vocab(n_letters: usize) -> Vocabulary {
    let mut tokens: Vec<&str> = LETTERS[..n_letters].to_vec();
    tokens.push("<end>");
    Vocabulary::new(tokens, "<end>").unwrap()
}

/// Every prefix of non-terminal tokens with length `<= max_len`.
pub fn prefixes(n_letters: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 0..n_letters {
                let mut q: Vec<TokenId> = p.clone();
                q.push(t);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

pub fn random_probs<R: Rng>(rng: &mut R, n: usize, min: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(min..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// `min_prob` > 0 keeps every token possible; 0 allows sparse rows.
pub fn random_instance<R: Rng>(rng: &mut R, n_letters: usize, max_len: usize, min_prob: f64) -> Instance {
    let v = vocab(n_letters);
    let terminal = v.terminal();
    let mut model = TableModel::new(v.clone());
    let mut rewards = HashMap::new();
    let mut complete = Vec::new();
    for p in prefixes(n_letters, max_len) {
        model.insert_row(None, p.clone(), random_probs(rng, v.len(), min_prob)).unwrap();
        let r = match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0..5) as f64 / 4.0,
            _ => rng.random::<f64>(),
        };
        rewards.insert(v.detokenize(&p), r);
        let mut c = p;
        c.push(terminal);
        complete.push(c);
    }
    Instance {
        model,
        reward: TableReward::new(rewards),
        max_len,
        complete,
    }
}

pub fn seq(v: &Vocabulary, prompt: &str, tokens: &[TokenId]) -> SequenceState {
    SequenceState::with_generated(prompt, v.terminal(), tokens.to_vec()).unwrap()
}
