//! Planning-guided decoding: Monte-Carlo tree search over token sequences.
//!
//! Each rollout walks down the tree with the prior-weighted UCB rule, expands
//! the leaf with the model's top-k next tokens, completes the leaf with beam
//! search, scores the completed program, and pushes the score back up. Edge
//! values track the *best* reward seen through the edge rather than the mean,
//! since transitions are deterministic.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cache::{CacheStats, SequenceCache, TreeStructureCache};
use crate::decode::{beam_search, GenerationBudget, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::model::{top_k, SequenceState, TokenId, TokenModel};
use crate::reward::{Evaluation, RewardFn};

/// Exploration weight `ln((visits + c_base + 1) / c_base) + c`.
pub fn beta(node_visits: u64, c: f64, c_base: f64) -> f64 {
    ((node_visits as f64 + c_base + 1.0) / c_base).ln() + c
}

/// Prior-weighted UCB score of one edge:
/// `q + beta * prior * sqrt(max(ln(parent_visits), 0)) / (1 + child_visits)`.
pub fn p_ucb(q: f64, prior: f64, parent_visits: u64, child_visits: u64, beta_val: f64) -> f64 {
    let log_visits = if parent_visits == 0 {
        0.0
    } else {
        (parent_visits as f64).ln().max(0.0)
    };
    q + beta_val * prior * log_visits.sqrt() / (1.0 + child_visits as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Exploration weight added to `beta`.
    pub c: f64,
    pub c_base: f64,
    /// Maximum children per node.
    pub k: usize,
    /// Beam width used to complete leaves.
    pub b: usize,
    pub max_rollouts: usize,
    /// Cap on generated tokens, terminal excluded.
    pub max_len: usize,
    pub tree_cache: bool,
    pub seq_cache: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c: 4.0,
            c_base: 10.0,
            k: 3,
            b: 1,
            max_rollouts: 64,
            max_len: DEFAULT_MAX_LEN,
            tree_cache: true,
            seq_cache: true,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c.is_nan() || self.c < 0.0 || self.c_base.is_nan() || self.c_base <= 0.0 || self.k == 0 || self.b == 0 || self.max_len == 0 {
            return Err(Error::InvalidArgument(format!(
                "search config needs c >= 0, c_base > 0, k >= 1, b >= 1, max_len >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

pub type NodeId = usize;

/// An outgoing edge: the token taken, its prior, and the best reward seen through it.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub token: TokenId,
    pub prior: f64,
    pub q: f64,
    pub child: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub state: SequenceState,
    /// Children in descending prior order.
    pub edges: Vec<Edge>,
    /// Completed rollouts that passed through this node.
    pub visits: u64,
    /// Sum of log priors from the root.
    pub log_prior: f64,
}

impl SearchNode {
    fn new(state: SequenceState, log_prior: f64) -> Self {
        Self {
            state,
            edges: Vec::new(),
            visits: 0,
            log_prior,
        }
    }

    pub fn edge(&self, token: TokenId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.token == token)
    }
}

/// Arena of search nodes; node 0 is the root.
#[derive(Debug, Clone)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(root: SequenceState) -> Self {
        Self {
            nodes: vec![SearchNode::new(root, 0.0)],
        }
    }

    pub const ROOT: NodeId = 0;

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> &SearchNode {
        &self.nodes[Self::ROOT]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index into `node.edges` of the child with the highest P-UCB score
    /// (lower token index on ties).
    pub fn select(&self, node: NodeId, c: f64, c_base: f64) -> Result<usize> {
        let n = &self.nodes[node];
        if n.edges.is_empty() {
            return Err(Error::Contract(format!("cannot select from childless node {}", n.state)));
        }
        let beta_val = beta(n.visits, c, c_base);
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in n.edges.iter().enumerate() {
            let score = p_ucb(e.q, e.prior, n.visits, self.nodes[e.child].visits, beta_val);
            best = match best {
                None => Some((i, score)),
                Some((j, s)) => {
                    let better = score > s || (score == s && e.token < n.edges[j].token);
                    Some(if better { (i, score) } else { (j, s) })
                }
            };
        }
        Ok(best.expect("non-empty").0)
    }

    /// Token chosen by [`SearchTree::select`].
    pub fn p_ucb_select(&self, node: NodeId, c: f64, c_base: f64) -> Result<TokenId> {
        Ok(self.nodes[node].edges[self.select(node, c, c_base)?].token)
    }

    /// Attaches children for `candidates`, keeping their order. Edge values start at 0.
    pub fn add_children(&mut self, node: NodeId, candidates: &[(TokenId, f64)]) -> Result<()> {
        let parent = &self.nodes[node];
        if parent.state.is_complete() {
            return Err(Error::Contract(format!("cannot expand complete state {}", parent.state)));
        }
        if !parent.edges.is_empty() {
            return Err(Error::Contract(format!("node {} is already expanded", parent.state)));
        }
        let base = parent.log_prior;
        let state = parent.state.clone();
        let mut edges = Vec::with_capacity(candidates.len());
        for &(token, prior) in candidates {
            let child = self.nodes.len();
            self.nodes.push(SearchNode::new(state.child(token)?, base + prior.ln()));
            edges.push(Edge {
                token,
                prior,
                q: 0.0,
                child,
            });
        }
        self.nodes[node].edges = edges;
        Ok(())
    }

    /// `Q <- max(Q, reward)` on every edge of `path` and one more visit for
    /// each node on it, the leaf included.
    pub fn backpropagate(&mut self, path: &[(NodeId, usize)], leaf: NodeId, reward: f64) {
        for &(node, edge) in path {
            let e = &mut self.nodes[node].edges[edge];
            e.q = e.q.max(reward);
            self.nodes[node].visits += 1;
        }
        self.nodes[leaf].visits += 1;
    }
}

/// Expands `node` with the top-`k` next tokens, served from `tree_cache`
/// when possible. Nodes already at `max_len` generated tokens get the
/// terminal token as their only child. Returns whether the model was called.
pub fn expand<M: TokenModel + ?Sized>(
    tree: &mut SearchTree,
    node: NodeId,
    model: &M,
    k: usize,
    max_len: usize,
    tree_cache: Option<&mut TreeStructureCache>,
) -> Result<bool> {
    let state = tree.node(node).state.clone();
    if state.is_complete() {
        return Err(Error::Contract(format!("cannot expand complete state {state}")));
    }
    if state.program_len() >= max_len {
        // Only one way to go; the prior cannot influence selection.
        tree.add_children(node, &[(state.terminal(), 1.0)])?;
        return Ok(false);
    }
    let k = k.min(model.vocab().len());
    let cached = tree_cache.and_then(|c| c.lookup(&state, k));
    let (candidates, called) = match cached {
        Some(c) => (c, false),
        None => (top_k(model, &state, k)?, true),
    };
    tree.add_children(node, &candidates)?;
    Ok(called)
}

/// Completed programs and their rewards, in discovery order.
#[derive(Debug, Clone, Default)]
pub struct ProgramDict {
    entries: Vec<(SequenceState, Evaluation)>,
    index: HashMap<Vec<TokenId>, usize>,
}

impl ProgramDict {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or raises the stored reward; never lowers it.
    pub fn insert(&mut self, program: SequenceState, eval: Evaluation) -> Result<()> {
        if !program.is_complete() {
            return Err(Error::Contract(format!("program {program} is not complete")));
        }
        match self.index.get(program.generated()) {
            Some(&i) => {
                let stored = &mut self.entries[i].1;
                if eval.reward > stored.reward {
                    *stored = eval;
                }
            }
            None => {
                self.index.insert(program.generated().to_vec(), self.entries.len());
                self.entries.push((program, eval));
            }
        }
        Ok(())
    }

    pub fn get(&self, program: &SequenceState) -> Option<Evaluation> {
        self.index.get(program.generated()).map(|&i| self.entries[i].1)
    }

    /// Highest reward; earliest inserted on ties.
    pub fn best(&self) -> Option<&(SequenceState, Evaluation)> {
        self.entries
            .iter()
            .reduce(|best, e| if e.1.reward > best.1.reward { e } else { best })
    }

    pub fn entries(&self) -> &[(SequenceState, Evaluation)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How a rollout obtained its program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProgramSource {
    /// Fresh beam search call.
    Beam,
    /// Reused from the sequence cache.
    SequenceCache,
    /// Selection reached a complete state; it was scored directly.
    TerminalLeaf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub rollout: usize,
    /// Generated tokens of the selected leaf.
    pub leaf: Vec<TokenId>,
    pub program: Vec<TokenId>,
    pub program_text: String,
    pub reward: f64,
    pub pass_rate: f64,
    pub source: ProgramSource,
    pub budget_used: u64,
    /// Best reward over rollouts so far.
    pub best_reward: f64,
}

pub type RunTrace = Vec<RolloutRecord>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub rollouts: u64,
    pub beam_calls: u64,
    /// Expansions answered by the model rather than the tree cache.
    pub topk_model_calls: u64,
    pub cache: CacheStats,
}

/// Best program found by a decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestProgram {
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub reward: f64,
    pub pass_rate: f64,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Option<BestProgram>,
    pub trace: RunTrace,
    pub budget_exhausted: bool,
    pub stats: SearchStats,
    pub programs: ProgramDict,
    pub tree: SearchTree,
}

/// One tree search over a single prompt.
pub struct Searcher<'a, M: ?Sized, R: ?Sized> {
    model: &'a M,
    reward: &'a R,
    config: SearchConfig,
    tree: SearchTree,
    tree_cache: TreeStructureCache,
    seq_cache: SequenceCache,
    programs: ProgramDict,
    trace: RunTrace,
    stats: SearchStats,
}

impl<'a, M: TokenModel + ?Sized, R: RewardFn + ?Sized> Searcher<'a, M, R> {
    pub fn new(model: &'a M, reward: &'a R, prompt: &str, config: SearchConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            reward,
            tree: SearchTree::new(model.vocab().root(prompt)),
            config,
            tree_cache: TreeStructureCache::new(),
            seq_cache: SequenceCache::new(),
            programs: ProgramDict::new(),
            trace: Vec::new(),
            stats: SearchStats::default(),
        })
    }

    fn score(&mut self, program: &SequenceState) -> Result<Evaluation> {
        if let Some(eval) = self.programs.get(program) {
            return Ok(eval);
        }
        self.reward
            .evaluate(&self.model.vocab().detokenize(program.generated()))
    }

    /// Runs one select/expand/evaluate/backpropagate iteration.
    /// Returns `Ok(false)` if the budget ran out before a program was produced.
    pub fn rollout(&mut self, budget: &GenerationBudget) -> Result<bool> {
        let cfg = self.config.clone();
        let mut node = SearchTree::ROOT;
        let mut path = Vec::new();
        while !self.tree.node(node).edges.is_empty() {
            let e = self.tree.select(node, cfg.c, cfg.c_base)?;
            path.push((node, e));
            node = self.tree.node(node).edges[e].child;
        }
        let leaf = self.tree.node(node).state.clone();

        let (program, eval, source) = if leaf.is_complete() {
            let eval = self.score(&leaf)?;
            (leaf.clone(), eval, ProgramSource::TerminalLeaf)
        } else {
            let cache = cfg.tree_cache.then_some(&mut self.tree_cache);
            if expand(&mut self.tree, node, self.model, cfg.k, cfg.max_len, cache)? {
                self.stats.topk_model_calls += 1;
            }
            let cached = if cfg.seq_cache {
                self.seq_cache.lookup(&leaf).map(|hit| hit.sequence.clone())
            } else {
                None
            };
            match cached {
                Some(seq) => {
                    let eval = self.score(&seq)?;
                    (seq, eval, ProgramSource::SequenceCache)
                }
                None => {
                    let beam = match beam_search(self.model, &leaf, cfg.b, cfg.max_len, budget) {
                        Ok(beam) => beam,
                        Err(Error::BudgetExhausted { .. }) => return Ok(false),
                        Err(e) => return Err(e),
                    };
                    self.stats.beam_calls += 1;
                    if cfg.tree_cache {
                        self.tree_cache.record_from_beam(&beam.trace, cfg.k)?;
                    }
                    let eval = self.score(&beam.sequence)?;
                    if cfg.seq_cache {
                        let ll = self.tree.node(node).log_prior + beam.log_prob;
                        self.seq_cache.insert(beam.sequence.clone(), eval.reward, ll)?;
                    }
                    (beam.sequence, eval, ProgramSource::Beam)
                }
            }
        };

        self.programs.insert(program.clone(), eval)?;
        self.tree.backpropagate(&path, node, eval.reward);
        self.stats.rollouts += 1;
        let best_reward = self
            .trace
            .last()
            .map_or(eval.reward, |r| r.best_reward.max(eval.reward));
        self.trace.push(RolloutRecord {
            rollout: self.trace.len() + 1,
            leaf: leaf.generated().to_vec(),
            program_text: self.model.vocab().detokenize(program.generated()),
            program: program.generated().to_vec(),
            reward: eval.reward,
            pass_rate: eval.pass_rate,
            source,
            budget_used: budget.used(),
            best_reward,
        });
        Ok(true)
    }

    /// Runs up to `max_rollouts` rollouts, stopping early if the budget runs out.
    pub fn run(mut self, budget: &GenerationBudget) -> Result<SearchOutcome> {
        let mut exhausted = false;
        for _ in 0..self.config.max_rollouts {
            if !self.rollout(budget)? {
                exhausted = true;
                break;
            }
        }
        self.stats.cache = CacheStats {
            tree_hits: self.tree_cache.hits(),
            tree_misses: self.tree_cache.misses(),
            seq_hits: self.seq_cache.hits(),
            seq_misses: self.seq_cache.misses(),
        };
        let best = self.programs.best().map(|(seq, eval)| BestProgram {
            tokens: seq.generated().to_vec(),
            text: self.model.vocab().detokenize(seq.generated()),
            reward: eval.reward,
            pass_rate: eval.pass_rate,
        });
        Ok(SearchOutcome {
            best,
            trace: self.trace,
            budget_exhausted: exhausted,
            stats: self.stats,
            programs: self.programs,
            tree: self.tree,
        })
    }
}

/// Tree search from the empty sequence of `prompt`.
pub fn run_pgtd<M: TokenModel + ?Sized, R: RewardFn + ?Sized>(
    model: &M,
    reward: &R,
    prompt: &str,
    config: &SearchConfig,
    budget: &GenerationBudget,
) -> Result<SearchOutcome> {
    Searcher::new(model, reward, prompt, config.clone())?.run(budget)
}
