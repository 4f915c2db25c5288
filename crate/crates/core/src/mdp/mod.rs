//! Core domain types for the language-augmented POMDP: vocabularies, token actions,
//! step records, trajectories, and seeded autoregressive rollout collection.

mod dump;
mod env;
mod rollout;
mod synth;
mod types;
mod vocab;

pub use dump::{read_trajectory_jsonl, write_trajectory_jsonl, DumpHeader};
pub use env::{ActionFormat, ActionTrie, Enumerable, Environment, Outcome};
pub use rollout::{
    action_token_logprobs, collect_rollout, collect_rollout_with, flatten_to_token_transitions, length_normalized_softmax, normalized_action_dist, sample_action,
    EpisodeStats, RolloutOptions, RolloutWorker, Sampling, TokenPolicy, TokenTransition,
    TokenValueFn, WorkerBatch,
};
pub use synth::{random_trajectory, HashedValues};
pub use types::{Action, Observation, StepRecord, Trajectory};
pub use vocab::{TokenId, Vocabulary, EOA};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("vocabulary needs at least two tokens, got {0}")]
    VocabularyTooSmall(usize),
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("actions must contain at least one token")]
    EmptyAction,
    #[error("action exceeded {max_len} tokens without an end-of-action token: {partial:?}")]
    TruncatedAction { partial: Vec<TokenId>, max_len: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("max_steps must be at least 1")]
    ZeroSteps,
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error("trajectory dump: {0}")]
    Dump(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
