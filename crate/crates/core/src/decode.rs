//! Beam search, top-k sampling, and the generation budget.
//!
//! One call to [`beam_search`] or [`sample_topk`] that produces a sequence
//! costs one unit of [`GenerationBudget`]; this is the unit every decoder in
//! the crate is compared on.

use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{SequenceState, TokenDistribution, TokenId, TokenModel};

/// Default cap on generated (non-terminal) tokens.
pub const DEFAULT_MAX_LEN: usize = 256;

/// Counts sequence generations against a fixed allowance.
///
/// Safe to share between threads; `used` never exceeds `max`.
#[derive(Debug)]
pub struct GenerationBudget {
    max: u64,
    used: AtomicU64,
}

impl GenerationBudget {
    pub fn new(max_generations: u64) -> Self {
        Self {
            max: max_generations,
            used: AtomicU64::new(0),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn max(&self) -> u64 {
        self.max
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> u64 {
        self.max - self.used()
    }

    pub fn is_exhausted(&self) -> bool {
        self.used() >= self.max
    }

    /// Takes one unit, or fails without side effects if none is left.
    pub fn try_consume(&self) -> Result<()> {
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| (u < self.max).then_some(u + 1))
            .map(|_| ())
            .map_err(|used| Error::BudgetExhausted { used, max: self.max })
    }
}

/// A partial or complete hypothesis with its accumulated log-probability.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEntry {
    pub state: SequenceState,
    pub score: f64,
}

/// Result of one [`beam_search`] call.
#[derive(Debug, Clone)]
pub struct BeamOutcome {
    /// Complete sequence (prefix included).
    pub sequence: SequenceState,
    /// Log-probability of the tokens appended after the prefix.
    pub log_prob: f64,
    /// The terminal token was appended at the length cap even though the
    /// model gave it zero probability.
    pub truncated: bool,
    /// Every state whose distribution was consulted, in query order.
    pub trace: Vec<(SequenceState, TokenDistribution)>,
}

fn rank(a: &BeamEntry, b: &BeamEntry) -> CmpOrdering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.state.generated().cmp(b.state.generated()))
}

/// Standard beam search of width `b` from `prefix`.
///
/// Finished hypotheses are set aside and compared by total log-probability,
/// without length normalization. Hypotheses that reach `max_len` generated
/// tokens are closed with the terminal token. A complete `prefix` is
/// returned as-is and costs nothing.
pub fn beam_search<M: TokenModel + ?Sized>(
    model: &M,
    prefix: &SequenceState,
    b: usize,
    max_len: usize,
    budget: &GenerationBudget,
) -> Result<BeamOutcome> {
    if b == 0 {
        return Err(Error::InvalidArgument("beam width must be >= 1".into()));
    }
    if prefix.is_complete() {
        return Ok(BeamOutcome {
            sequence: prefix.clone(),
            log_prob: 0.0,
            truncated: false,
            trace: Vec::new(),
        });
    }
    budget.try_consume()?;

    let terminal = prefix.terminal();
    let mut beams = vec![BeamEntry {
        state: prefix.clone(),
        score: 0.0,
    }];
    let mut finished: Vec<(BeamEntry, bool)> = Vec::new();
    let mut trace = Vec::new();

    while !beams.is_empty() {
        let mut candidates = Vec::new();
        for beam in beams.drain(..) {
            let dist = model.next_distribution(&beam.state)?;
            if beam.state.program_len() >= max_len {
                let p = dist.prob(terminal);
                finished.push((
                    BeamEntry {
                        state: beam.state.child(terminal)?,
                        score: beam.score + p.ln(),
                    },
                    p == 0.0,
                ));
            } else {
                for (tok, &p) in dist.probs().iter().enumerate() {
                    if p > 0.0 {
                        candidates.push(BeamEntry {
                            state: beam.state.child(tok)?,
                            score: beam.score + p.ln(),
                        });
                    }
                }
            }
            trace.push((beam.state, dist));
        }
        candidates.sort_by(rank);
        candidates.truncate(b);
        for cand in candidates {
            if cand.state.is_complete() {
                finished.push((cand, false));
            } else {
                beams.push(cand);
            }
        }
        // Scores only decrease, so an open beam can no longer beat a strictly better finished one.
        if let Some(best) = finished.iter().map(|(e, _)| e.score).max_by(f64::total_cmp) {
            if beams.iter().all(|e| e.score < best) {
                break;
            }
        }
    }

    let (best, truncated) = finished
        .into_iter()
        .min_by(|a, b| rank(&a.0, &b.0))
        .expect("beam search always finishes at least one hypothesis");
    Ok(BeamOutcome {
        sequence: best.state,
        log_prob: best.score,
        truncated,
        trace,
    })
}

/// Result of one [`sample_topk`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub sequence: SequenceState,
    /// The terminal token was appended because the length cap was reached.
    pub forced_terminal: bool,
}

/// Draws one sequence, sampling each token from the temperature-scaled
/// distribution restricted to the `topk` most likely tokens.
pub fn sample_topk<M: TokenModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prefix: &SequenceState,
    topk: usize,
    temperature: f64,
    max_len: usize,
    budget: &GenerationBudget,
    rng: &mut R,
) -> Result<SampleOutcome> {
    if topk == 0 {
        return Err(Error::InvalidArgument("topk must be >= 1".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    if prefix.is_complete() {
        return Ok(SampleOutcome {
            sequence: prefix.clone(),
            forced_terminal: false,
        });
    }
    budget.try_consume()?;

    let mut state = prefix.clone();
    while !state.is_complete() {
        if state.program_len() >= max_len {
            state.push(state.terminal())?;
            return Ok(SampleOutcome {
                sequence: state,
                forced_terminal: true,
            });
        }
        let dist = model.next_distribution(&state)?;
        let tok = sample_from_top(&dist, topk, temperature, rng)?;
        state.push(tok)?;
    }
    Ok(SampleOutcome {
        sequence: state,
        forced_terminal: false,
    })
}

/// One draw from the top-`topk` tokens of `dist`, reweighted by `p^(1/temperature)`.
pub fn sample_from_top<R: Rng + ?Sized>(
    dist: &TokenDistribution,
    topk: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<TokenId> {
    let top: Vec<(TokenId, f64)> = dist
        .top_k(topk)?
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|(t, p)| (t, p.powf(1.0 / temperature)))
        .collect();
    sample_weighted(&top, rng)
}

/// Draws a token with probability proportional to its weight.
pub fn sample_weighted<R: Rng + ?Sized>(weighted: &[(TokenId, f64)], rng: &mut R) -> Result<TokenId> {
    let total: f64 = weighted.iter().map(|(_, w)| w).sum();
    if weighted.is_empty() || total <= 0.0 {
        return Err(Error::InvalidDistribution("no token with positive weight".into()));
    }
    let mut u = rng.random::<f64>() * total;
    for &(tok, w) in weighted {
        if u < w {
            return Ok(tok);
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last weight.
    Ok(weighted.iter().rev().find(|(_, w)| *w > 0.0).expect("positive total").0)
}

/// Sum of log next-token probabilities along `seq.generated()`;
/// `-inf` as soon as one step has probability zero.
pub fn log_likelihood<M: TokenModel + ?Sized>(model: &M, seq: &SequenceState) -> Result<f64> {
    let mut state = SequenceState::new(seq.prompt(), seq.terminal());
    let mut total = 0.0;
    for &tok in seq.generated() {
        let p = model.next_distribution(&state)?.prob(tok);
        if p == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += p.ln();
        state.push(tok)?;
    }
    Ok(total)
}
