//! Desk-scale token-action environments.

mod bandit;
mod chain;
mod kitchen;
mod table;

pub use bandit::KeyTokenBandit;
pub use chain::SyntheticChain;
pub use kitchen::{Holding, Item, ItemState, KitchenConfig, KitchenState, Station, TokenKitchen};
pub use table::TableEnv;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Enumerable, Environment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeOver,
    #[error("invalid environment configuration: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    KeyToken,
    Chain,
    Kitchen,
}

/// Flat environment description used by experiment configs.
///
/// Fields irrelevant to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// KeyTokenBandit rewards for (kitchen, bathroom, bedroom).
    pub destination_rewards: Vec<f64>,
    /// SyntheticChain length K.
    pub chain_len: usize,
    /// SyntheticChain action length |a|.
    pub action_len: usize,
    pub height: usize,
    pub width: usize,
    pub recipe: Vec<String>,
    pub max_episode_steps: usize,
    pub chop_reward: f64,
    pub deliver_reward: f64,
    pub wrong_delivery_reward: f64,
    /// Magnitude of the per-step penalty (subtracted every step).
    pub step_penalty: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        let k = KitchenConfig::default();
        Self {
            kind: EnvKind::KeyToken,
            destination_rewards: KeyTokenBandit::DEFAULT_REWARDS.to_vec(),
            chain_len: 3,
            action_len: 4,
            height: k.height,
            width: k.width,
            recipe: k.recipe.iter().map(|i| i.name().to_string()).collect(),
            max_episode_steps: k.max_episode_steps,
            chop_reward: k.chop_reward,
            deliver_reward: k.deliver_reward,
            wrong_delivery_reward: k.wrong_delivery_reward,
            step_penalty: k.step_penalty,
        }
    }
}

impl EnvConfig {
    pub fn key_token() -> Self {
        Self::default()
    }

    pub fn chain(chain_len: usize, action_len: usize) -> Self {
        Self {
            kind: EnvKind::Chain,
            chain_len,
            action_len,
            ..Self::default()
        }
    }

    pub fn kitchen(height: usize, width: usize) -> Self {
        Self {
            kind: EnvKind::Kitchen,
            height,
            width,
            ..Self::default()
        }
    }

    pub fn kitchen_config(&self) -> Result<KitchenConfig, EnvError> {
        let recipe = self
            .recipe
            .iter()
            .map(|s| Item::parse(s).ok_or_else(|| EnvError::Config(format!("unknown item {s:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(KitchenConfig {
            height: self.height,
            width: self.width,
            recipe,
            max_episode_steps: self.max_episode_steps,
            chop_reward: self.chop_reward,
            deliver_reward: self.deliver_reward,
            wrong_delivery_reward: self.wrong_delivery_reward,
            step_penalty: self.step_penalty,
        })
    }

    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self.build_enumerable()? {
            EnumerableEnv::KeyToken(e) => Box::new(e),
            EnumerableEnv::Chain(e) => Box::new(e),
            EnumerableEnv::Kitchen(e) => e,
        })
    }

    pub fn build_enumerable(&self) -> Result<EnumerableEnv, EnvError> {
        Ok(match self.kind {
            EnvKind::KeyToken => {
                let r: [f64; 3] = self.destination_rewards.as_slice().try_into().map_err(|_| {
                    EnvError::Config("destination_rewards needs exactly 3 entries".into())
                })?;
                EnumerableEnv::KeyToken(KeyTokenBandit::with_rewards(r)?)
            }
            EnvKind::Chain => EnumerableEnv::Chain(SyntheticChain::new(
                self.chain_len,
                self.action_len,
                self.max_episode_steps,
            )?),
            EnvKind::Kitchen => EnumerableEnv::Kitchen(Box::new(TokenKitchen::new(self.kitchen_config()?)?)),
        })
    }
}

/// A concrete enumerable environment built from an [`EnvConfig`].
#[derive(Clone, Debug)]
pub enum EnumerableEnv {
    KeyToken(KeyTokenBandit),
    Chain(SyntheticChain),
    Kitchen(Box<TokenKitchen>),
}

impl EnumerableEnv {
    pub fn as_enumerable(&self) -> &dyn Enumerable {
        match self {
            EnumerableEnv::KeyToken(e) => e,
            EnumerableEnv::Chain(e) => e,
            EnumerableEnv::Kitchen(e) => e.as_ref(),
        }
    }

    /// Time limit used for finite-horizon optimal returns.
    pub fn horizon(&self) -> usize {
        match self {
            EnumerableEnv::KeyToken(_) => 1,
            EnumerableEnv::Chain(e) => e.max_episode_steps(),
            EnumerableEnv::Kitchen(e) => e.config().max_episode_steps,
        }
    }
}
