use serde::Serialize;

use crate::backups::{naive_token_targets_from_rows, BackupMode, BackupVariant};
use crate::mdp::{Action, Observation, StepRecord, Trajectory};
use crate::par::{map_range, Execution};

use super::dp::{completion_max, value_iteration_with, DpOptions, DpResult};
use super::model::PrefixModel;
use super::OracleError;

fn check_gamma_w(gamma_w: f64) -> Result<(), OracleError> {
    if (0.0..=1.0).contains(&gamma_w) {
        Ok(())
    } else {
        Err(OracleError::Domain(format!("gamma_w {gamma_w} outside [0, 1]")))
    }
}

/// Gap between the action-level Q of an optimal action and the naive token-level Q at its
/// `j`-th token: `(1 − γ_w^{L−j}) R + γ_a (1 − γ_w^{L+L'−j−1}) Q'`, where `Q'` is the
/// optimal action value at the next observation and `L'` its action length.
pub fn discrepancy_closed_form(
    reward: f64,
    gamma_a: f64,
    gamma_w: f64,
    len_a: usize,
    j: usize,
    next_max_q: f64,
    len_a_next: usize,
) -> Result<f64, OracleError> {
    check_gamma_w(gamma_w)?;
    if j == 0 || j >= len_a {
        return Err(OracleError::Domain(format!(
            "token position {j} must lie in [1, {len_a})"
        )));
    }
    if len_a_next == 0 {
        return Err(OracleError::Domain("next action length must be >= 1".into()));
    }
    let intra = gamma_w.powi((len_a - j) as i32);
    let through = gamma_w.powi((len_a + len_a_next - j - 1) as i32);
    Ok((1.0 - intra) * reward + gamma_a * (1.0 - through) * next_max_q)
}

/// State-value twin: `(1 − γ_w^{L−j}) (R + γ_a V(o'))`.
pub fn discrepancy_v_form(
    reward: f64,
    gamma_a: f64,
    gamma_w: f64,
    len_a: usize,
    j: usize,
    next_value: f64,
) -> Result<f64, OracleError> {
    check_gamma_w(gamma_w)?;
    if j == 0 || j >= len_a {
        return Err(OracleError::Domain(format!(
            "token position {j} must lie in [1, {len_a})"
        )));
    }
    Ok((1.0 - gamma_w.powi((len_a - j) as i32)) * (reward + gamma_a * next_value))
}

/// Iterates naive token targets on a single action of length `len_a` whose successor has
/// fixed value `next_value`, returning the converged per-position token values.
pub fn naive_v_form_fixed_point(
    reward: f64,
    gamma_a: f64,
    gamma_w: f64,
    len_a: usize,
    next_value: f64,
) -> Result<Vec<f64>, OracleError> {
    let step = StepRecord {
        obs: Observation::new(0, vec![]),
        action: Action::new(vec![0; len_a.max(1)])
            .map_err(|e| OracleError::Domain(e.to_string()))?,
        reward,
        next_obs: Observation::new(1, vec![]),
        done: false,
        token_logprobs: vec![0.0; len_a],
        token_values: vec![0.0; len_a + 1],
    };
    let traj = Trajectory::new(vec![step], gamma_a.clamp(f64::MIN_POSITIVE, 1.0))
        .map_err(|e| OracleError::Domain(e.to_string()))?;
    let mut row = vec![0.0; len_a + 1];
    row[len_a] = next_value;
    for _ in 0..=len_a {
        let t = naive_token_targets_from_rows(&traj, std::slice::from_ref(&row), gamma_w, gamma_a)?;
        row[..len_a].copy_from_slice(&t.value_targets);
    }
    row.truncate(len_a);
    Ok(row)
}

fn same_model(model: &PrefixModel, results: &[&DpResult]) -> Result<(), OracleError> {
    for r in results {
        if r.fingerprint() != model.fingerprint() {
            return Err(OracleError::ModelMismatch(format!(
                "result computed on model {} but checked against {}",
                r.fingerprint(),
                model.fingerprint()
            )));
        }
    }
    Ok(())
}

fn check_action(dp: &DpResult) -> Result<(), OracleError> {
    match dp.mode.variant {
        BackupVariant::ActionLevel => Ok(()),
        _ => Err(OracleError::ModelMismatch(format!(
            "expected an action-level result, got {}",
            dp.mode.label()
        ))),
    }
}

/// Largest `|Q_token(n, w) − max_{a ⊒ prefix·w} Q_action(o, a)|` over all token edges.
pub fn check_consistency(
    model: &PrefixModel,
    dp_token: &DpResult,
    dp_action: &DpResult,
) -> Result<f64, OracleError> {
    same_model(model, &[dp_token, dp_action])?;
    check_action(dp_action)?;
    if dp_token.mode.gamma_a != dp_action.mode.gamma_a {
        return Err(OracleError::ModelMismatch("results use different gamma_a".into()));
    }
    let best = completion_max(model, &dp_action.q_action);
    let mut gap: f64 = 0.0;
    for (n, row) in dp_token.q_token.iter().enumerate() {
        for (e, q) in row.iter().enumerate() {
            gap = gap.max((q - best[n][e]).abs());
        }
    }
    Ok(gap)
}

/// One probed token of an action that is optimal through that token.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscrepancyProbe {
    pub obs: usize,
    pub action: usize,
    /// 1-based token position.
    pub j: usize,
    pub len_a: usize,
    pub len_next: usize,
    pub reward: f64,
    /// Optimal action-level value at the next observation (0 when terminal).
    pub next_max_q: f64,
    /// Optimal naive full-action value at the next observation (0 when terminal).
    pub next_max_naive: f64,
    pub observed: f64,
    /// Closed form evaluated at `next_max_q`.
    pub closed_form: f64,
    /// Exact prediction with the naive successor value: the closed form plus
    /// `γ_a γ_w^{L+L'−j−1} (Q' − Q̃')`.
    pub predicted: f64,
    /// True when the successor's naive and action-level optima coincide, so the
    /// closed form itself is exact.
    pub closed_form_exact: bool,
}

/// Probes every `(obs, action, j < |a|)` where the action is a best completion of its `j`-th
/// token under both backups, all completions share its length, and the next observation's
/// actions share one length.
pub fn discrepancy_probes(
    model: &PrefixModel,
    dp_naive: &DpResult,
    dp_action: &DpResult,
) -> Result<Vec<DiscrepancyProbe>, OracleError> {
    same_model(model, &[dp_naive, dp_action])?;
    check_action(dp_action)?;
    let gamma_w = match dp_naive.mode.variant {
        BackupVariant::NaiveToken { gamma_w } => gamma_w,
        BackupVariant::Bad => 1.0,
        _ => {
            return Err(OracleError::ModelMismatch(
                "discrepancy probes need a naive token-level result".into(),
            ))
        }
    };
    let gamma_a = dp_action.mode.gamma_a;
    let best_action = completion_max(model, &dp_action.q_action);
    let best_naive = completion_max(model, &dp_naive.q_action);
    let mut through_len: Vec<Vec<Option<usize>>> = model
        .nodes
        .iter()
        .map(|n| vec![None; n.edges.len()])
        .collect();
    let mut uniform_len = vec![true; model.node_count()];
    for row in &model.actions {
        for info in row {
            for &(n, e) in &info.path {
                match through_len[n][e] {
                    None => through_len[n][e] = Some(info.action.len()),
                    Some(l) if l != info.action.len() => uniform_len[n] = false,
                    _ => {}
                }
            }
        }
    }
    let obs_len = |o: usize| -> Option<usize> {
        let row = &model.actions[o];
        let l = row[0].action.len();
        row.iter().all(|a| a.action.len() == l).then_some(l)
    };
    let max_of = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut out = Vec::new();
    for (o, row) in model.actions.iter().enumerate() {
        for (a, info) in row.iter().enumerate() {
            let len_a = info.action.len();
            let (len_next, next_q, next_naive) = match info.next {
                None => (1, 0.0, 0.0),
                Some(nx) => match obs_len(nx) {
                    Some(l) => (l, max_of(&dp_action.q_action[nx]), max_of(&dp_naive.q_action[nx])),
                    None => continue,
                },
            };
            let qa = dp_action.q_action[o][a];
            let qn = dp_naive.q_action[o][a];
            for (jj, &(n, e)) in info.path.iter().enumerate().take(len_a - 1) {
                let j = jj + 1;
                let optimal = qa >= best_action[n][e] - 1e-12 && qn >= best_naive[n][e] - 1e-12;
                if !optimal || !uniform_len[n] {
                    continue;
                }
                let closed_form = discrepancy_closed_form(
                    info.reward, gamma_a, gamma_w, len_a, j, next_q, len_next,
                )?;
                let carry = gamma_w.powi((len_a + len_next - j - 1) as i32);
                let predicted = closed_form + gamma_a * carry * (next_q - next_naive);
                out.push(DiscrepancyProbe {
                    obs: o,
                    action: a,
                    j,
                    len_a,
                    len_next,
                    reward: info.reward,
                    next_max_q: next_q,
                    next_max_naive: next_naive,
                    observed: qa - dp_naive.q_token[n][e],
                    closed_form,
                    predicted,
                    closed_form_exact: (next_q - next_naive).abs() <= 1e-12,
                });
            }
        }
    }
    Ok(out)
}

/// Observations where the greedy token-by-token action under `dp_token` differs from the
/// action-level argmax. Ties within `1e-9` go to the lowest legal-action index.
pub fn greedy_disagreements(
    model: &PrefixModel,
    dp_token: &DpResult,
    dp_action: &DpResult,
) -> Result<Vec<usize>, OracleError> {
    same_model(model, &[dp_token, dp_action])?;
    check_action(dp_action)?;
    let tie = 1e-9;
    let mut bad = Vec::new();
    for (o, row) in model.actions.iter().enumerate() {
        let qa = &dp_action.q_action[o];
        let m = qa.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let by_action = qa.iter().position(|&q| q >= m - tie);
        let by_token = row.iter().position(|info| {
            info.path.iter().all(|&(n, e)| {
                let qs = &dp_token.q_token[n];
                let nm = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                qs[e] >= nm - tie
            })
        });
        if by_action != by_token {
            bad.push(o);
        }
    }
    Ok(bad)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma_w: f64,
    pub action_len: usize,
    pub max_gap: f64,
    pub mode: String,
}

/// Max consistency gap of the naive backup for every `(γ_w, |a|)` cell.
///
/// `build(|a|)` produces the model for one action length. Cells run under `exec`; rows
/// come back in grid order (γ_w outer, |a| inner).
pub fn discrepancy_sweep<F>(
    build: F,
    gamma_w_grid: &[f64],
    action_len_grid: &[usize],
    gamma_a: f64,
    opts: &DpOptions,
) -> Result<Vec<SweepRow>, OracleError>
where
    F: Fn(usize) -> Result<PrefixModel, OracleError> + Sync,
{
    if gamma_w_grid.is_empty() || action_len_grid.is_empty() {
        return Err(OracleError::Domain("sweep grids must be non-empty".into()));
    }
    let models = map_range(opts.exec, action_len_grid.len(), |i| build(action_len_grid[i]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let inner = DpOptions {
        exec: Execution::Sequential,
        ..*opts
    };
    let actions = map_range(opts.exec, models.len(), |i| {
        value_iteration_with(&models[i], BackupMode::action_level(gamma_a), &inner)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let cells = gamma_w_grid.len() * action_len_grid.len();
    map_range(opts.exec, cells, |c| {
        let (gi, li) = (c / action_len_grid.len(), c % action_len_grid.len());
        let gamma_w = gamma_w_grid[gi];
        let naive =
            value_iteration_with(&models[li], BackupMode::naive(gamma_w, gamma_a), &inner)?;
        Ok(SweepRow {
            gamma_w,
            action_len: action_len_grid[li],
            max_gap: check_consistency(&models[li], &naive, &actions[li])?,
            mode: "naive".into(),
        })
    })
    .into_iter()
    .collect()
}
