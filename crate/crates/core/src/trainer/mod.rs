//! PPO training: token-level POAD and NTPO, plus an action-level baseline.

mod batch;
mod config;
mod losses;
mod train;


use std::path::PathBuf;

use thiserror::Error;

pub use batch::{advantage_normalize, build_steps, normalize_step_advantages, BatchStep};
pub use config::{AdvantageEstimator, Algo, TrainConfig};
pub use losses::{
    action_approx_kl, action_policy_loss, critic_loss, critic_targets, policy_loss,
    token_approx_kl, CriticLoss, PolicyLoss,
};
pub use train::{
    train, train_with, write_metrics_csv, EnvFactory, EpisodeRecord, MetricsRow, RunArtifacts,
    TrainOutput, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {quantity} at update {update}, epoch {epoch}, minibatch {minibatch} (dump: {dump:?})")]
    NonFinite {
        quantity: String,
        update: usize,
        epoch: usize,
        minibatch: usize,
        dump: Option<PathBuf>,
    },
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
    #[error(transparent)]
    Env(#[from] crate::envs::EnvError),
    #[error(transparent)]
    Backup(#[from] crate::backups::BackupError),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
