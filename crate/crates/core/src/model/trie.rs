use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{SequenceState, TokenDistribution, TokenId, TokenModel, Vocabulary};
use crate::error::{Error, Result};

/// Count-based model over a weighted corpus of complete sequences.
///
/// `P(a | prefix) = count(prefix + a) / count(prefix)`, where `count(p)` is
/// the total weight of corpus sequences starting with `p`. Prefixes absent
/// from the corpus fall back to the uniform distribution.
#[derive(Debug, Clone)]
pub struct TrieModel {
    vocab: Vocabulary,
    nodes: Vec<TrieNode>,
    shared_root: Option<usize>,
    prompt_roots: HashMap<String, usize>,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    count: u64,
    children: BTreeMap<TokenId, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub tokens: Vec<String>,
    pub count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
}

/// On-disk trie format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrieFile {
    pub vocab: Vec<String>,
    pub terminal: String,
    pub corpus: Vec<CorpusEntry>,
}

impl TrieModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            nodes: Vec::new(),
            shared_root: None,
            prompt_roots: HashMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrieFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &TrieFile) -> Result<Self> {
        let mut model = Self::new(Vocabulary::new(file.vocab.clone(), &file.terminal)?);
        for entry in &file.corpus {
            let ids = entry
                .tokens
                .iter()
                .map(|t| model.vocab.lookup(t))
                .collect::<Result<Vec<_>>>()?;
            model.add_sequence(entry.prompt_id.as_deref(), &ids, entry.count)?;
        }
        Ok(model)
    }

    /// Adds `count` occurrences of a complete sequence to the corpus.
    pub fn add_sequence(&mut self, prompt: Option<&str>, tokens: &[TokenId], count: u64) -> Result<()> {
        let terminal = self.vocab.terminal();
        if tokens.last() != Some(&terminal) {
            return Err(Error::Parse(format!("corpus sequence {tokens:?} does not end with the terminal token")));
        }
        if tokens[..tokens.len() - 1].contains(&terminal) || tokens.iter().any(|&t| t >= self.vocab.len()) {
            return Err(Error::Parse(format!("corpus sequence {tokens:?} is malformed")));
        }
        if count == 0 {
            return Err(Error::Parse("corpus entry with zero count".into()));
        }
        let root = match prompt {
            Some(p) => match self.prompt_roots.get(p) {
                Some(&r) => r,
                None => {
                    let r = self.alloc();
                    self.prompt_roots.insert(p.to_string(), r);
                    r
                }
            },
            None => match self.shared_root {
                Some(r) => r,
                None => {
                    let r = self.alloc();
                    self.shared_root = Some(r);
                    r
                }
            },
        };
        let mut node = root;
        self.nodes[node].count += count;
        for &tok in tokens {
            let next = match self.nodes[node].children.get(&tok) {
                Some(&n) => n,
                None => {
                    let n = self.alloc();
                    self.nodes[node].children.insert(tok, n);
                    n
                }
            };
            node = next;
            self.nodes[node].count += count;
        }
        Ok(())
    }

    fn alloc(&mut self) -> usize {
        self.nodes.push(TrieNode::default());
        self.nodes.len() - 1
    }

    fn find(&self, state: &SequenceState) -> Option<&TrieNode> {
        let mut node = self
            .prompt_roots
            .get(state.prompt())
            .copied()
            .or(self.shared_root)?;
        for tok in state.generated() {
            node = *self.nodes[node].children.get(tok)?;
        }
        Some(&self.nodes[node])
    }
}

impl TokenModel for TrieModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        let Some(node) = self.find(state).filter(|n| !n.children.is_empty()) else {
            return Ok(TokenDistribution::uniform(self.vocab.len()));
        };
        let total = node.count as f64;
        let mut probs = vec![0.0; self.vocab.len()];
        for (&tok, &child) in &node.children {
            probs[tok] = self.nodes[child].count as f64 / total;
        }
        TokenDistribution::new(probs)
    }
}
