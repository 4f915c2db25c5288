//! Exact dynamic programming on the (observation, token-prefix) expansion of enumerable
//! environments, plus closed-form discrepancy checks between token-level and
//! action-level fixed points.

mod discrepancy;
mod dp;
mod horizon;
mod model;

pub use discrepancy::{
    check_consistency, discrepancy_closed_form, discrepancy_probes, discrepancy_sweep,
    discrepancy_v_form, greedy_disagreements, naive_v_form_fixed_point, DiscrepancyProbe,
    SweepRow,
};
pub use dp::{
    completion_max, soft_action_iteration, value_iteration, value_iteration_with, DpOptions,
    DpResult,
};
pub use horizon::{finite_horizon_values, optimal_return, optimal_return_for};
pub use model::{
    enumerate_prefix_model, ActionInfo, Edge, EdgeTarget, Node, PrefixModel,
    DEFAULT_NODE_BUDGET,
};

use thiserror::Error;

use crate::backups::BackupError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("prefix model has {nodes} nodes, over the budget of {budget}")]
    TooLarge { nodes: usize, budget: usize },
    #[error("value iteration did not converge after {iterations} iterations; residuals {trace:?}")]
    NonConvergence { iterations: usize, trace: Vec<f64> },
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Backup(#[from] BackupError),
}

#[cfg(test)]
mod tests;
