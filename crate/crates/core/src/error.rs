use thiserror::Error;

use crate::backups::BackupError;
use crate::envs::EnvError;
use crate::mdp::MdpError;
use crate::oracle::OracleError;
use crate::policy::PolicyError;
use crate::trainer::TrainError;

/// Crate-wide error, wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Backup(#[from] BackupError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
