use crate::mdp::Enumerable;

use super::model::{enumerate_prefix_model, PrefixModel, DEFAULT_NODE_BUDGET};
use super::OracleError;

/// Optimal expected discounted return within `horizon` steps from the start distribution
/// (uniform over the start support), by backward induction over the action-level model.
///
/// This equals an exhaustive search over all action sequences of length `≤ horizon`.
pub fn optimal_return(model: &PrefixModel, horizon: usize, gamma_a: f64) -> f64 {
    let values = finite_horizon_values(model, horizon, gamma_a);
    let s: f64 = model.starts.iter().map(|&o| values[o]).sum();
    s / model.starts.len() as f64
}

/// `V_h(o)` for `h = horizon`.
pub fn finite_horizon_values(model: &PrefixModel, horizon: usize, gamma_a: f64) -> Vec<f64> {
    let mut v = vec![0.0; model.observation_count()];
    for _ in 0..horizon {
        v = model
            .actions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|a| a.reward + a.next.map_or(0.0, |n| gamma_a * v[n]))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    v
}

pub fn optimal_return_for(
    env: &dyn Enumerable,
    horizon: usize,
    gamma_a: f64,
) -> Result<f64, OracleError> {
    let model = enumerate_prefix_model(env, DEFAULT_NODE_BUDGET)?;
    Ok(optimal_return(&model, horizon, gamma_a))
}
