//! Next-token models.
//!
//! A [`TokenModel`] maps a partial sequence to a probability vector over a
//! fixed [`Vocabulary`]. Everything above this module (decoders, the tree
//! search, caches) only ever talks to the trait, so a toy table, an n-gram
//! trie, and an HTTP-backed language model are interchangeable.

mod remote;
mod table;
mod trie;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};

pub use remote::{RemoteConfig, RemoteModel};
pub use table::TableModel;
pub use trie::{CorpusEntry, TrieFile, TrieModel};

/// Index of a token in a [`Vocabulary`].
pub type TokenId = usize;

/// Tolerance used when checking that a probability vector sums to one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Ordered token strings plus the distinguished terminal token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    terminal: TokenId,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: Vec<S>, terminal: &str) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if tokens.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary needs at least 2 tokens, got {}",
                tokens.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate token {tok:?}")));
            }
        }
        let terminal = *index
            .get(terminal)
            .ok_or_else(|| Error::InvalidArgument(format!("terminal {terminal:?} not in vocabulary")))?;
        Ok(Self { tokens, terminal, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn terminal(&self) -> TokenId {
        self.terminal
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn lookup(&self, token: &str) -> Result<TokenId> {
        self.id(token)
            .ok_or_else(|| Error::Parse(format!("unknown token {token:?}")))
    }

    /// Concatenates token strings, dropping the terminal token.
    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| id != self.terminal)
            .filter_map(|&id| self.token(id))
            .collect()
    }

    /// Empty sequence for `prompt`.
    pub fn root(&self, prompt: &str) -> SequenceState {
        SequenceState::new(prompt, self.terminal)
    }
}

/// A prompt key plus the tokens generated after it.
///
/// The prompt is an opaque key: toy models use it to pick a namespace and
/// remote models forward it verbatim. A state is complete once its last
/// generated token is the terminal token; nothing may follow the terminal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SequenceState {
    prompt: Arc<str>,
    terminal: TokenId,
    generated: Vec<TokenId>,
}

impl SequenceState {
    pub fn new(prompt: &str, terminal: TokenId) -> Self {
        Self {
            prompt: Arc::from(prompt),
            terminal,
            generated: Vec::new(),
        }
    }

    pub fn with_generated(prompt: &str, terminal: TokenId, generated: Vec<TokenId>) -> Result<Self> {
        if let Some(pos) = generated.iter().position(|&t| t == terminal) {
            if pos + 1 != generated.len() {
                return Err(Error::Contract(format!(
                    "terminal token at position {pos} is followed by more tokens"
                )));
            }
        }
        Ok(Self {
            prompt: Arc::from(prompt),
            terminal,
            generated,
        })
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    pub fn terminal(&self) -> TokenId {
        self.terminal
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.generated
    }

    pub fn is_complete(&self) -> bool {
        self.generated.last() == Some(&self.terminal)
    }

    /// Number of generated tokens, not counting a trailing terminal.
    pub fn program_len(&self) -> usize {
        self.generated.len() - usize::from(self.is_complete())
    }

    pub fn push(&mut self, token: TokenId) -> Result<()> {
        if self.is_complete() {
            return Err(Error::Contract("cannot extend a complete sequence".into()));
        }
        self.generated.push(token);
        Ok(())
    }

    pub fn child(&self, token: TokenId) -> Result<Self> {
        let mut next = self.clone();
        next.push(token)?;
        Ok(next)
    }

    /// True if `self.generated` is a prefix of `other.generated` under the same prompt.
    pub fn is_prefix_of(&self, other: &SequenceState) -> bool {
        self.prompt == other.prompt && other.generated.starts_with(&self.generated)
    }
}

impl fmt::Display for SequenceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]{:?}", self.prompt, self.generated)
    }
}

/// A probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDistribution {
    probs: Vec<f64>,
}

impl TokenDistribution {
    /// Validates `probs`: finite, non-negative, summing to one within tolerance.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty probability vector".into()));
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {i} is {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Tokens ranked by probability, highest first, lower index winning ties.
    /// Returns `min(k, |V|)` entries; zero-probability tokens may pad the tail.
    pub fn top_k(&self, k: usize) -> Result<Vec<(TokenId, f64)>> {
        if k == 0 {
            return Err(Error::InvalidArgument("top_k requires k >= 1".into()));
        }
        Ok(self.ranked().into_iter().take(k).collect())
    }

    /// Every token, sorted as in [`TokenDistribution::top_k`].
    pub fn ranked(&self) -> Vec<(TokenId, f64)> {
        let mut ranked: Vec<(TokenId, f64)> = self.probs.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked
    }
}

/// Source of next-token distributions.
///
/// Implementations provide [`TokenModel::distribution`]; callers use
/// [`TokenModel::next_distribution`], which enforces the state contract and
/// validates the result. Implementations must be deterministic.
pub trait TokenModel: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    /// Raw distribution for a state that is known not to be complete.
    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution>;

    /// Non-fatal issues found while loading (e.g. renormalized rows).
    fn warnings(&self) -> &[String] {
        &[]
    }

    fn next_distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        if state.is_complete() {
            return Err(Error::Contract(format!(
                "next_distribution called on complete state {state}"
            )));
        }
        let dist = self.distribution(state)?;
        if dist.len() != self.vocab().len() {
            return Err(Error::InvalidDistribution(format!(
                "expected {} entries, got {}",
                self.vocab().len(),
                dist.len()
            )));
        }
        Ok(dist)
    }
}

/// The `k` most likely next tokens (capped at the vocabulary size).
pub fn top_k<M: TokenModel + ?Sized>(
    model: &M,
    state: &SequenceState,
    k: usize,
) -> Result<Vec<(TokenId, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("top_k requires k >= 1".into()));
    }
    model.next_distribution(state)?.top_k(k)
}

impl<M: TokenModel + ?Sized> TokenModel for &M {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        (**self).distribution(state)
    }
    fn warnings(&self) -> &[String] {
        (**self).warnings()
    }
}

impl<M: TokenModel + ?Sized> TokenModel for Box<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        (**self).distribution(state)
    }
    fn warnings(&self) -> &[String] {
        (**self).warnings()
    }
}

impl<M: TokenModel + ?Sized> TokenModel for Arc<M> {
    fn vocab(&self) -> &Vocabulary {
        (**self).vocab()
    }
    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        (**self).distribution(state)
    }
    fn warnings(&self) -> &[String] {
        (**self).warnings()
    }
}

/// Same distribution for every state.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocabulary,
}

impl UniformModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl TokenModel for UniformModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, _state: &SequenceState) -> Result<TokenDistribution> {
        Ok(TokenDistribution::uniform(self.vocab.len()))
    }
}

/// Wraps a model and counts distribution requests.
#[derive(Debug)]
pub struct CountingModel<M> {
    inner: M,
    calls: AtomicU64,
}

impl<M: TokenModel> CountingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }
}

impl<M: TokenModel> TokenModel for CountingModel<M> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.distribution(state)
    }

    fn warnings(&self) -> &[String] {
        self.inner.warnings()
    }
}

/// Which on-disk format [`load_model`] should read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Table,
    Trie,
    Uniform,
    Remote,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(Self::Table),
            "trie" => Ok(Self::Trie),
            "uniform" => Ok(Self::Uniform),
            "remote" => Ok(Self::Remote),
            other => Err(Error::InvalidArgument(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct VocabFile {
    vocab: Vec<String>,
    terminal: String,
}

/// Loads and validates a model file of the given kind.
pub fn load_model(path: impl AsRef<Path>, kind: ModelKind) -> Result<Box<dyn TokenModel>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let model: Box<dyn TokenModel> = match kind {
        ModelKind::Table => Box::new(TableModel::from_json(&text)?),
        ModelKind::Trie => Box::new(TrieModel::from_json(&text)?),
        ModelKind::Uniform => {
            let file: VocabFile =
                serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            Box::new(UniformModel::new(Vocabulary::new(file.vocab, &file.terminal)?))
        }
        ModelKind::Remote => {
            let cfg: RemoteConfig =
                serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
            Box::new(RemoteModel::new(cfg)?)
        }
    };
    for w in model.warnings() {
        log::warn!("{}: {w}", path.as_ref().display());
    }
    Ok(model)
}
