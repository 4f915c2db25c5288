use serde::{Deserialize, Serialize};

use crate::backups::BackupMode;
use crate::par::Execution;
use crate::policy::Backend;

use super::TrainError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    /// Token-level PPO with action-decomposed (BAD) critic targets.
    Poad,
    /// Token-level PPO with naive intra-action discounting `γ_w`.
    Ntpo,
    /// Action-level PPO over the length-normalised legal-action distribution.
    ActionPpo,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Poad => "poad",
            Algo::Ntpo => "ntpo",
            Algo::ActionPpo => "action_ppo",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageEstimator {
    #[default]
    Gae,
    /// One-step `v_targ − v`.
    TdResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub backend: Backend,
    pub gamma_a: f64,
    /// Intra-action discount; only NTPO reads it, and NTPO requires it.
    pub gamma_w: Option<f64>,
    pub lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub ppo_epochs: usize,
    pub num_mini_batch: usize,
    /// Environment steps collected per update, summed over workers.
    pub batch_size: usize,
    pub rollout_threads: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub kl_threshold: f64,
    pub total_env_steps: usize,
    pub seed: u64,
    pub advantage: AdvantageEstimator,
    pub normalize_advantages: bool,
    /// Restrict sampling to tokens that extend a legal action.
    pub use_mask: bool,
    /// Write checkpoints every this many updates (0 disables).
    pub checkpoint_every: usize,
    /// Episodes in the rolling return window.
    pub return_window: usize,
    pub exec: Execution,
}

impl TrainConfig {
    /// Defaults for `algo`: PPO constants adopted from the reference hyper-parameter table,
    /// learning rates scaled for small backends.
    pub fn new(algo: Algo) -> Self {
        let (ppo_epochs, num_mini_batch) = match algo {
            Algo::Poad => (5, 2),
            Algo::Ntpo => (5, 4),
            Algo::ActionPpo => (1, 4),
        };
        Self {
            algo,
            backend: Backend::Tabular,
            gamma_a: 0.95,
            gamma_w: match algo {
                Algo::Ntpo => Some(0.95),
                _ => None,
            },
            lambda: 0.95,
            actor_lr: 3e-3,
            critic_lr: 1e-2,
            ppo_epochs,
            num_mini_batch,
            batch_size: 128,
            rollout_threads: 4,
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            kl_threshold: 0.02,
            total_env_steps: 2000,
            seed: 1,
            advantage: AdvantageEstimator::Gae,
            normalize_advantages: true,
            use_mask: true,
            checkpoint_every: 0,
            return_window: 100,
            exec: Execution::default(),
        }
    }

    pub fn mode(&self) -> BackupMode {
        match self.algo {
            Algo::Poad => BackupMode::bad(self.gamma_a),
            Algo::Ntpo => BackupMode::naive(self.gamma_w.unwrap_or(1.0), self.gamma_a),
            Algo::ActionPpo => BackupMode::action_level(self.gamma_a),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.algo == Algo::Ntpo {
            match self.gamma_w {
                None => return bad("ntpo requires an explicit gamma_w".into()),
                Some(g) if !(0.0..=1.0).contains(&g) => {
                    return bad(format!("gamma_w {g} outside [0, 1]"))
                }
                _ => {}
            }
        }
        if !(self.gamma_a > 0.0 && self.gamma_a <= 1.0) {
            return bad(format!("gamma_a {} outside (0, 1]", self.gamma_a));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.batch_size == 0 || self.num_mini_batch == 0 || self.ppo_epochs == 0 {
            return bad("batch_size, num_mini_batch and ppo_epochs must be positive".into());
        }
        if !self.batch_size.is_multiple_of(self.num_mini_batch) {
            return bad(format!(
                "batch_size {} is not divisible by num_mini_batch {}",
                self.batch_size, self.num_mini_batch
            ));
        }
        if self.rollout_threads == 0 || self.rollout_threads > self.batch_size {
            return bad(format!(
                "rollout_threads must lie in [1, batch_size], got {}",
                self.rollout_threads
            ));
        }
        for (name, x) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("{name} must be positive, got {x}"));
            }
        }
        for (name, x) in [
            ("clip_eps", self.clip_eps),
            ("value_coef", self.value_coef),
            ("entropy_coef", self.entropy_coef),
            ("kl_threshold", self.kl_threshold),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("{name} must be non-negative, got {x}"));
            }
        }
        if self.total_env_steps == 0 {
            return bad("total_env_steps must be positive".into());
        }
        if self.return_window == 0 {
            return bad("return_window must be positive".into());
        }
        Ok(())
    }
}
