//! Direct access to the exact prefix-MDP oracle.

use serde::Serialize;

use tokrl::backups::{BackupMode, BackupVariant};
use tokrl::envs::EnvConfig;
use tokrl::oracle::{
    check_consistency, enumerate_prefix_model, greedy_disagreements, optimal_return,
    soft_action_iteration, value_iteration_with, DpOptions, DEFAULT_NODE_BUDGET,
};

use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct DpReport {
    pub mode: String,
    pub nodes: usize,
    pub edges: usize,
    pub observations: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Mean fixed-point value over the start observations.
    pub start_value: f64,
    /// Action-level value over the start observations, for comparison.
    pub action_start_value: f64,
    /// Max gap between this mode's token Q and the completion max of action-level Q.
    pub consistency_gap: f64,
    /// Observations whose greedy token path disagrees with the action-level argmax.
    pub greedy_disagreements: Vec<usize>,
    /// Optimal expected discounted return within the episode horizon.
    pub horizon_optimum: f64,
    pub horizon: usize,
}

pub fn dp(env: &EnvConfig, mode: BackupMode, opts: &DpOptions) -> Result<DpReport, CliError> {
    let e = env.build_enumerable()?;
    let model = enumerate_prefix_model(e.as_enumerable(), DEFAULT_NODE_BUDGET)?;
    let action = value_iteration_with(&model, BackupMode::action_level(mode.gamma_a), opts)?;
    let (res, reference) = match mode.variant {
        BackupVariant::SoftBad { beta } => (
            value_iteration_with(&model, mode, opts)?,
            soft_action_iteration(&model, beta, mode.gamma_a, opts)?,
        ),
        _ => (value_iteration_with(&model, mode, opts)?, action.clone()),
    };
    let start = |r: &tokrl::oracle::DpResult| {
        model.starts.iter().map(|&o| r.obs_value(&model, o)).sum::<f64>() / model.starts.len() as f64
    };
    let consistency_gap = match mode.variant {
        BackupVariant::SoftBad { .. } => (start(&res) - start(&reference)).abs(),
        _ => check_consistency(&model, &res, &action)?,
    };
    let greedy = match mode.variant {
        BackupVariant::SoftBad { .. } => Vec::new(),
        _ => greedy_disagreements(&model, &res, &action)?,
    };
    Ok(DpReport {
        mode: mode.label(),
        nodes: model.node_count(),
        edges: model.edge_count(),
        observations: model.observation_count(),
        iterations: res.iterations,
        residual: res.residual,
        start_value: start(&res),
        action_start_value: start(&action),
        consistency_gap,
        greedy_disagreements: greedy,
        horizon_optimum: optimal_return(&model, e.horizon(), mode.gamma_a),
        horizon: e.horizon(),
    })
}
