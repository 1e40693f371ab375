use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{SequenceState, TokenDistribution, TokenId, TokenModel, Vocabulary, NORMALIZATION_TOLERANCE};
use crate::error::{Error, Result};

type Rows = HashMap<Vec<TokenId>, TokenDistribution>;

/// Explicit per-prefix distributions.
///
/// Rows are keyed by the generated prefix. A shared row set applies to every
/// prompt; a prompt may instead carry its own namespace. Prefixes with no row
/// get the uniform distribution.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocabulary,
    shared: Rows,
    prompts: HashMap<String, Rows>,
    warnings: Vec<String>,
}

/// On-disk table format.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableFile {
    pub vocab: Vec<String>,
    pub terminal: String,
    /// Space-joined prefix tokens (`""` for the root) → token → probability.
    #[serde(default)]
    pub rows: BTreeMap<String, BTreeMap<String, f64>>,
    /// Per-prompt namespaces; same shape as `rows`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub prompts: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
}

impl TableModel {
    pub fn new(vocab: Vocabulary) -> Self {
        Self {
            vocab,
            shared: HashMap::new(),
            prompts: HashMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn from_file(file: TableFile) -> Result<Self> {
        if let Some(tok) = file.vocab.iter().find(|t| t.contains(char::is_whitespace) || t.is_empty()) {
            return Err(Error::Parse(format!(
                "table vocabulary token {tok:?} is empty or contains whitespace"
            )));
        }
        let mut model = Self::new(Vocabulary::new(file.vocab, &file.terminal)?);
        for (key, row) in &file.rows {
            let prefix = model.parse_prefix(key)?;
            let probs = model.parse_row(key, row)?;
            model.insert_row(None, prefix, probs)?;
        }
        for (prompt, rows) in &file.prompts {
            for (key, row) in rows {
                let prefix = model.parse_prefix(key)?;
                let probs = model.parse_row(key, row)?;
                model.insert_row(Some(prompt), prefix, probs)?;
            }
        }
        Ok(model)
    }

    /// Serializes back to the on-disk format.
    pub fn to_file(&self) -> TableFile {
        let render = |rows: &Rows| {
            rows.iter()
                .map(|(prefix, dist)| {
                    let key = prefix
                        .iter()
                        .map(|&t| self.vocab.tokens()[t].clone())
                        .collect::<Vec<_>>()
                        .join(" ");
                    let row = dist
                        .probs()
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| **p > 0.0)
                        .map(|(t, p)| (self.vocab.tokens()[t].clone(), *p))
                        .collect();
                    (key, row)
                })
                .collect()
        };
        TableFile {
            vocab: self.vocab.tokens().to_vec(),
            terminal: self.vocab.tokens()[self.vocab.terminal()].clone(),
            rows: render(&self.shared),
            prompts: self
                .prompts
                .iter()
                .map(|(p, rows)| (p.clone(), render(rows)))
                .collect(),
        }
    }

    /// Adds a row; `probs` is renormalized if it is off by more than the tolerance.
    pub fn insert_row(&mut self, prompt: Option<&str>, prefix: Vec<TokenId>, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.vocab.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} entries for a vocabulary of {}",
                probs.len(),
                self.vocab.len()
            )));
        }
        if prefix.iter().any(|&t| t >= self.vocab.len() || t == self.vocab.terminal()) {
            return Err(Error::Parse(format!("row prefix {prefix:?} is not an open prefix")));
        }
        let dist = self.normalize(&prefix, probs)?;
        let rows = match prompt {
            Some(p) => self.prompts.entry(p.to_string()).or_default(),
            None => &mut self.shared,
        };
        rows.insert(prefix, dist);
        Ok(())
    }

    fn normalize(&mut self, prefix: &[TokenId], probs: Vec<f64>) -> Result<TokenDistribution> {
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("row {prefix:?} has entry {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "row {prefix:?} sums to zero and cannot be normalized"
            )));
        }
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            self.warnings
                .push(format!("row {prefix:?} summed to {sum}; renormalized"));
            return TokenDistribution::new(probs.into_iter().map(|p| p / sum).collect());
        }
        TokenDistribution::new(probs)
    }

    fn parse_prefix(&self, key: &str) -> Result<Vec<TokenId>> {
        key.split_whitespace().map(|t| self.vocab.lookup(t)).collect()
    }

    fn parse_row(&self, key: &str, row: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut probs = vec![0.0; self.vocab.len()];
        for (tok, p) in row {
            let id = self
                .vocab
                .id(tok)
                .ok_or_else(|| Error::Parse(format!("row {key:?} references unknown token {tok:?}")))?;
            probs[id] = *p;
        }
        Ok(probs)
    }
}

impl TokenModel for TableModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        let rows = self.prompts.get(state.prompt()).unwrap_or(&self.shared);
        Ok(rows
            .get(state.generated())
            .cloned()
            .unwrap_or_else(|| TokenDistribution::uniform(self.vocab.len())))
    }

    fn warnings(&self) -> &[String] {
        &self.warnings
    }
}
