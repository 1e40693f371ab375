use crate::error::{Error, Result};
use crate::model::{SequenceState, TokenId, Vocabulary};
use crate::reward::RewardFn;

/// Largest `|V|^max_len` the oracle accepts.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub reward: f64,
    pub sequence: SequenceState,
    /// Number of complete sequences evaluated.
    pub evaluated: usize,
}

/// Number of complete sequences with at most `max_len` non-terminal tokens.
pub fn complete_sequence_count(vocab_len: usize, max_len: usize) -> u128 {
    let branch = (vocab_len - 1) as u128;
    (0..=max_len as u32).map(|l| branch.pow(l)).sum()
}

/// Exhaustively scores every complete sequence with at most `max_len`
/// non-terminal tokens and returns the best (lexicographically smallest
/// token sequence on ties).
pub fn brute_force_oracle<R: RewardFn + ?Sized>(
    vocab: &Vocabulary,
    reward: &R,
    prompt: &str,
    max_len: usize,
) -> Result<OracleResult> {
    let size = (vocab.len() as u128).checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if size > ORACLE_LIMIT {
        return Err(Error::OracleGuard {
            count: size,
            limit: ORACLE_LIMIT,
        });
    }
    let terminal = vocab.terminal();
    let open: Vec<TokenId> = (0..vocab.len()).filter(|&t| t != terminal).collect();

    let mut best: Option<(f64, Vec<TokenId>)> = None;
    let mut evaluated = 0;
    let mut prefix: Vec<TokenId> = Vec::new();
    // Odometer over prefixes of length 0..=max_len.
    let mut stack: Vec<usize> = Vec::new();
    loop {
        let mut seq = prefix.clone();
        seq.push(terminal);
        let r = reward.evaluate(&vocab.detokenize(&seq))?.reward;
        evaluated += 1;
        let better = match &best {
            None => true,
            Some((br, bs)) => r > *br || (r == *br && seq < *bs),
        };
        if better {
            best = Some((r, seq));
        }

        if prefix.len() < max_len {
            prefix.push(open[0]);
            stack.push(0);
            continue;
        }
        // Advance to the next sibling, backing up as needed.
        loop {
            let Some(i) = stack.pop() else {
                let (reward, seq) = best.expect("at least one sequence");
                return Ok(OracleResult {
                    reward,
                    sequence: SequenceState::with_generated(prompt, terminal, seq)?,
                    evaluated,
                });
            };
            prefix.pop();
            if i + 1 < open.len() {
                prefix.push(open[i + 1]);
                stack.push(i + 1);
                break;
            }
        }
    }
}
