//! Reuse of work done by earlier rollouts of one search.
//!
//! [`TreeStructureCache`] keeps the top-k candidate lists implied by the
//! distributions a beam search already consulted, so expansion of those
//! prefixes needs no model call. [`SequenceCache`] keeps every completed
//! rollout program; a later evaluation whose prefix matches one of them
//! reuses it instead of running beam search again. Both are keyed by
//! generated tokens only and belong to a single search.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SequenceState, TokenDistribution, TokenId};

/// Hit and miss counters for both caches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub tree_hits: u64,
    pub tree_misses: u64,
    pub seq_hits: u64,
    pub seq_misses: u64,
}

#[derive(Debug, Clone)]
struct TopKEntry {
    k: usize,
    covers_vocab: bool,
    ranked: Vec<(TokenId, f64)>,
}

/// Prefix → ranked next-token candidates.
#[derive(Debug, Clone, Default)]
pub struct TreeStructureCache {
    entries: HashMap<Vec<TokenId>, TopKEntry>,
    hits: u64,
    misses: u64,
}

impl TreeStructureCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Stores the top-`k` list of `dist` for `state`. An existing entry of
    /// equal or greater width is kept.
    pub fn record(&mut self, state: &SequenceState, dist: &TokenDistribution, k: usize) -> Result<()> {
        if let Some(existing) = self.entries.get(state.generated()) {
            if existing.k >= k || existing.covers_vocab {
                return Ok(());
            }
        }
        let ranked = dist.top_k(k)?;
        self.entries.insert(
            state.generated().to_vec(),
            TopKEntry {
                k,
                covers_vocab: ranked.len() == dist.len(),
                ranked,
            },
        );
        Ok(())
    }

    /// Records every prefix a beam search expanded.
    pub fn record_from_beam(&mut self, trace: &[(SequenceState, TokenDistribution)], k: usize) -> Result<()> {
        trace.iter().try_for_each(|(state, dist)| self.record(state, dist, k))
    }

    /// Candidates for `state` if an entry at least `k` wide exists.
    pub fn lookup(&mut self, state: &SequenceState, k: usize) -> Option<Vec<(TokenId, f64)>> {
        match self.entries.get(state.generated()) {
            Some(e) if e.k >= k || e.covers_vocab => {
                self.hits += 1;
                Some(e.ranked.iter().take(k).copied().collect())
            }
            _ => {
                self.misses += 1;
                None
            }
        }
    }
}

/// A completed program stored in the [`SequenceCache`].
#[derive(Debug, Clone, PartialEq)]
pub struct CachedSequence {
    pub sequence: SequenceState,
    pub reward: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, Default)]
struct SeqNode {
    children: BTreeMap<TokenId, usize>,
    /// Entry with the highest log-likelihood below this node.
    best: Option<usize>,
}

/// Prefix tree over completed sequences.
#[derive(Debug, Clone)]
pub struct SequenceCache {
    nodes: Vec<SeqNode>,
    entries: Vec<CachedSequence>,
    exact: HashMap<Vec<TokenId>, usize>,
    hits: u64,
    misses: u64,
}

impl Default for SequenceCache {
    fn default() -> Self {
        Self::new()
    }
}

impl SequenceCache {
    pub fn new() -> Self {
        Self {
            nodes: vec![SeqNode::default()],
            entries: Vec::new(),
            exact: HashMap::new(),
            hits: 0,
            misses: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn misses(&self) -> u64 {
        self.misses
    }

    /// Adds a complete sequence. Re-inserting keeps the larger reward.
    pub fn insert(&mut self, sequence: SequenceState, reward: f64, log_likelihood: f64) -> Result<()> {
        if !sequence.is_complete() {
            return Err(Error::Contract(format!("sequence cache only holds complete sequences, got {sequence}")));
        }
        if let Some(&idx) = self.exact.get(sequence.generated()) {
            let entry = &mut self.entries[idx];
            entry.reward = entry.reward.max(reward);
            return Ok(());
        }
        let idx = self.entries.len();
        let tokens = sequence.generated().to_vec();
        self.entries.push(CachedSequence {
            sequence,
            reward,
            log_likelihood,
        });
        self.exact.insert(tokens.clone(), idx);

        let mut node = 0;
        self.promote(node, idx);
        for tok in tokens {
            node = match self.nodes[node].children.get(&tok) {
                Some(&n) => n,
                None => {
                    self.nodes.push(SeqNode::default());
                    let n = self.nodes.len() - 1;
                    self.nodes[node].children.insert(tok, n);
                    n
                }
            };
            self.promote(node, idx);
        }
        Ok(())
    }

    fn promote(&mut self, node: usize, idx: usize) {
        let better = match self.nodes[node].best {
            None => true,
            Some(cur) => self.entries[idx].log_likelihood > self.entries[cur].log_likelihood,
        };
        if better {
            self.nodes[node].best = Some(idx);
        }
    }

    /// The most likely stored sequence that extends `state` (earliest on ties).
    pub fn lookup(&mut self, state: &SequenceState) -> Option<&CachedSequence> {
        let mut node = 0;
        for tok in state.generated() {
            match self.nodes[node].children.get(tok) {
                Some(&n) => node = n,
                None => {
                    self.misses += 1;
                    return None;
                }
            }
        }
        match self.nodes[node].best {
            Some(idx) => {
                self.hits += 1;
                Some(&self.entries[idx])
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn entries(&self) -> &[CachedSequence] {
        &self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::{beam_search, log_likelihood, GenerationBudget};
    use crate::model::{top_k, TableModel, TokenModel};

    // vocab: a=0 b=1 c=2 <end>=3
    fn seq(tokens: &[TokenId]) -> SequenceState {
        SequenceState::with_generated("p", 3, tokens.to_vec()).unwrap()
    }

    fn model() -> TableModel {
        TableModel::from_json(
            r#"{"vocab":["a","b","c","<end>"],"terminal":"<end>","rows":{
                "":{"a":0.6,"b":0.3,"<end>":0.1},
                "a":{"b":0.55,"c":0.45},
                "a b":{"<end>":1.0},
                "a c":{"<end>":1.0}}}"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_cache_misses() {
        let mut c = SequenceCache::new();
        assert!(c.lookup(&seq(&[])).is_none());
        assert_eq!(c.misses(), 1);
    }

    #[test]
    fn prefix_hit_returns_stored_sequence() {
        let mut c = SequenceCache::new();
        c.insert(seq(&[0, 1, 3]), 0.5, -1.0).unwrap();
        let hit = c.lookup(&seq(&[0])).unwrap();
        assert_eq!(hit.sequence, seq(&[0, 1, 3]));
        assert_eq!(hit.reward, 0.5);
        assert!(c.lookup(&seq(&[0, 1, 3])).is_some());
        assert!(c.lookup(&seq(&[1])).is_none());
    }

    #[test]
    fn multi_match_prefers_higher_log_likelihood() {
        let m = model();
        let ab = seq(&[0, 1, 3]);
        let ac = seq(&[0, 2, 3]);
        // 0.6*0.55 = 0.33 vs 0.6*0.45 = 0.27
        let ll_ab = log_likelihood(&m, &ab).unwrap();
        let ll_ac = log_likelihood(&m, &ac).unwrap();
        assert!((ll_ab - 0.33f64.ln()).abs() < 1e-12);
        assert!((ll_ac - 0.27f64.ln()).abs() < 1e-12);
        let mut c = SequenceCache::new();
        c.insert(ac.clone(), 1.0, ll_ac).unwrap();
        c.insert(ab.clone(), 0.0, ll_ab).unwrap();
        assert_eq!(c.lookup(&seq(&[0])).unwrap().sequence, ab);
        assert_eq!(c.lookup(&seq(&[0, 2])).unwrap().sequence, ac);
    }

    #[test]
    fn duplicate_insert_keeps_max_reward() {
        let mut c = SequenceCache::new();
        c.insert(seq(&[0, 3]), 0.8, -1.0).unwrap();
        c.insert(seq(&[0, 3]), 0.2, -1.0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.lookup(&seq(&[0, 3])).unwrap().reward, 0.8);
    }

    #[test]
    fn incomplete_insert_is_rejected() {
        let mut c = SequenceCache::new();
        assert!(matches!(c.insert(seq(&[0]), 1.0, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn greedy_trace_records_each_step() {
        let m = model();
        let out = beam_search(&m, &m.vocab().root("p"), 1, 8, &GenerationBudget::unlimited()).unwrap();
        assert_eq!(out.sequence, seq(&[0, 1, 3]));
        let mut t = TreeStructureCache::new();
        t.record_from_beam(&out.trace, 3).unwrap();
        assert_eq!(t.len(), 3);
        t.record_from_beam(&out.trace, 3).unwrap();
        assert_eq!(t.len(), 3);
        for (state, _) in &out.trace {
            assert_eq!(t.lookup(state, 3).unwrap(), top_k(&m, state, 3).unwrap());
        }
    }

    #[test]
    fn tree_lookup_width_rule() {
        let m = model();
        let root = m.vocab().root("p");
        let dist = m.next_distribution(&root).unwrap();
        let mut t = TreeStructureCache::new();
        assert!(t.lookup(&root, 2).is_none());
        t.record(&root, &dist, 3).unwrap();
        assert_eq!(t.lookup(&root, 2).unwrap(), vec![(0, 0.6), (1, 0.3)]);
        // |V| = 4 so width 3 does not cover a request for 5
        assert!(t.lookup(&root, 5).is_none());
        t.record(&root, &dist, 4).unwrap();
        assert_eq!(t.lookup(&root, 5).unwrap().len(), 4);
        assert_eq!((t.hits(), t.misses()), (2, 2));
    }
}
