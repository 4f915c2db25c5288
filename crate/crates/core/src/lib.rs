//! Token-decomposed reinforcement learning for language-style agents.
//!
//! Actions are token sequences emitted autoregressively. This crate provides:
//!
//! * [`mdp`]: vocabularies, observations, actions, trajectories and seeded rollout collection;
//! * [`envs`]: a key-token bandit, a small grid kitchen, and synthetic chains;
//! * [`backups`]: action-level, naive token-level, action-decomposed (BAD) and soft BAD
//!   targets, plus token-level GAE;
//! * [`oracle`]: exact dynamic programming on the (observation, token-prefix) MDP;
//! * [`policy`]: autoregressive actor and token critic with tabular and small-net backends;
//! * [`trainer`]: POAD, NTPO and action-level (length-normalised) PPO.
//!
//! Data-parallel loops (rollout workers, value-iteration sweeps, parameter grids) run on
//! rayon when the `parallel` feature is enabled and fall back to sequential iteration
//! otherwise; see [`par`].

pub mod backups;
pub mod envs;
pub mod error;
pub mod mdp;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
