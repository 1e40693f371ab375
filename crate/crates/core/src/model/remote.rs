use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{SequenceState, TokenDistribution, TokenId, TokenModel, Vocabulary};
use crate::error::{Error, Result};

/// Connection settings for a model server speaking the `/v1/next` protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub vocab: Vec<String>,
    pub terminal: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}

#[derive(Debug, Serialize)]
struct NextRequest<'a> {
    prompt_id: &'a str,
    generated: &'a [TokenId],
}

#[derive(Debug, Deserialize)]
struct NextResponse {
    probs: Vec<f64>,
}

/// HTTP client for an external model server.
///
/// Responses are memoized per `(prompt, generated)` so that repeated queries
/// within a run are answered locally and stay deterministic.
pub struct RemoteModel {
    url: String,
    vocab: Vocabulary,
    agent: ureq::Agent,
    memo: Mutex<HashMap<(String, Vec<TokenId>), TokenDistribution>>,
    requests: AtomicU64,
}

impl RemoteModel {
    pub fn new(cfg: RemoteConfig) -> Result<Self> {
        let vocab = Vocabulary::new(cfg.vocab, &cfg.terminal)?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .new_agent();
        Ok(Self {
            url: format!("{}/v1/next", cfg.endpoint.trim_end_matches('/')),
            vocab,
            agent,
            memo: Mutex::new(HashMap::new()),
            requests: AtomicU64::new(0),
        })
    }

    /// Number of HTTP requests actually issued.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn fetch(&self, state: &SequenceState) -> Result<TokenDistribution> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = NextRequest {
            prompt_id: state.prompt(),
            generated: state.generated(),
        };
        let resp: NextResponse = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| Error::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| Error::Transport(format!("malformed response: {e}")))?;
        if resp.probs.len() != self.vocab.len() {
            return Err(Error::InvalidDistribution(format!(
                "server returned {} probabilities for a vocabulary of {}",
                resp.probs.len(),
                self.vocab.len()
            )));
        }
        TokenDistribution::new(resp.probs)
    }
}

impl std::fmt::Debug for RemoteModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteModel")
            .field("url", &self.url)
            .field("requests", &self.requests())
            .finish()
    }
}

impl TokenModel for RemoteModel {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn distribution(&self, state: &SequenceState) -> Result<TokenDistribution> {
        let key = (state.prompt().to_string(), state.generated().to_vec());
        if let Some(hit) = self.memo.lock().expect("memo poisoned").get(&key) {
            return Ok(hit.clone());
        }
        let dist = self.fetch(state)?;
        // A concurrent fetch for the same key may have landed first; keep that one.
        let mut memo = self.memo.lock().expect("memo poisoned");
        Ok(memo.entry(key).or_insert(dist).clone())
    }
}
