//! Planning-guided sequence decoding.
//!
//! A Monte-Carlo tree search over a next-token model, where each rollout is
//! completed by beam search and scored by running the program against test
//! cases. Baseline decoders, caches and an experiment harness live alongside.

pub mod baselines;
pub mod cache;
pub mod decode;
pub mod error;
pub mod harness;
pub mod model;
pub mod reward;
pub mod rng;
pub mod search;

pub use baselines::{pure_beam, sampling_filtering, smcg_td, DecodeOutcome};
pub use cache::{CacheStats, SequenceCache, TreeStructureCache};
pub use decode::{beam_search, sample_topk, BeamOutcome, GenerationBudget};
pub use error::{Error, Result};
pub use harness::{run_experiment, Algorithm, ExperimentConfig, ProblemRecord, RunReport};
pub use model::{SequenceState, TokenDistribution, TokenId, TokenModel, Vocabulary};
pub use reward::{get_reward, Evaluation, ProblemSpec, RewardFn, RewardKind, RewardSpec, TestCase};
pub use search::{run_pgtd, SearchConfig, SearchOutcome};
