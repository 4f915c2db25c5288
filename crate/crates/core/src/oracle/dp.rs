use crate::backups::{BackupMode, BackupVariant};
use crate::par::{map_range, Execution};

use super::model::{EdgeTarget, PrefixModel};
use super::OracleError;

#[derive(Clone, Copy, Debug)]
pub struct DpOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Initial value of every entry.
    pub init: f64,
    pub exec: Execution,
}

impl Default for DpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 500_000,
            init: 0.0,
            exec: Execution::default(),
        }
    }
}

/// Fixed point of one backup operator on a [`PrefixModel`].
#[derive(Clone, Debug)]
pub struct DpResult {
    pub mode: BackupMode,
    /// Value per node: the aggregate over its outgoing edges.
    pub node_values: Vec<f64>,
    /// Q per `(node, edge)`.
    pub q_token: Vec<Vec<f64>>,
    /// Q per `(observation, legal action)`. Token modes report the boundary-edge value.
    pub q_action: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub(crate) fingerprint: String,
}

impl DpResult {
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn obs_value(&self, model: &PrefixModel, obs: usize) -> f64 {
        self.node_values[model.roots[obs]]
    }
}

const PAR_THRESHOLD: usize = 2048;

fn exec_for(n: usize, exec: Execution) -> Execution {
    if n >= PAR_THRESHOLD {
        exec
    } else {
        Execution::Sequential
    }
}

/// `max` for `beta == 0`, otherwise `β ln Σ_i (1/n) exp(q_i / β)`.
pub(crate) fn aggregate(qs: impl Iterator<Item = f64> + Clone, beta: f64) -> f64 {
    let m = qs.clone().fold(f64::NEG_INFINITY, f64::max);
    if beta == 0.0 {
        return m;
    }
    let (mut s, mut n) = (0.0, 0usize);
    for q in qs {
        s += ((q - m) / beta).exp();
        n += 1;
    }
    m + beta * (s / n as f64).ln()
}

fn check_tol(opts: &DpOptions) -> Result<(), OracleError> {
    if opts.tol > 0.0 && opts.tol.is_finite() {
        Ok(())
    } else {
        Err(OracleError::Domain(format!("tol {} must be positive", opts.tol)))
    }
}

/// Iterates `step` (old → new) until the sup-norm change is at most `tol`.
fn iterate(
    mut values: Vec<f64>,
    opts: &DpOptions,
    step: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, usize, f64), OracleError> {
    let mut trace = Vec::new();
    for it in 1..=opts.max_iters {
        let next = step(&values);
        let residual = next
            .iter()
            .zip(&values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        if it <= 16 || it % 1000 == 0 {
            trace.push(residual);
        }
        if !residual.is_finite() {
            trace.push(residual);
            return Err(OracleError::NonConvergence {
                iterations: it,
                trace,
            });
        }
        if residual <= opts.tol {
            return Ok((values, it, residual));
        }
    }
    Err(OracleError::NonConvergence {
        iterations: opts.max_iters,
        trace,
    })
}

fn edge_q(model: &PrefixModel, v: &[f64], node: usize, e: usize, g: f64, gamma_a: f64) -> f64 {
    let n = &model.nodes[node];
    match n.edges[e].target {
        EdgeTarget::Intra(c) => g * v[c],
        EdgeTarget::Boundary { action } => {
            let info = &model.actions[n.obs][action];
            match info.next {
                Some(o) => info.reward + gamma_a * v[model.roots[o]],
                None => info.reward,
            }
        }
    }
}

/// Synchronous value iteration of the selected backup with default options.
pub fn value_iteration(
    model: &PrefixModel,
    mode: BackupMode,
    tol: f64,
) -> Result<DpResult, OracleError> {
    value_iteration_with(
        model,
        mode,
        &DpOptions {
            tol,
            ..DpOptions::default()
        },
    )
}

/// Synchronous (Jacobi) value iteration.
///
/// Token modes iterate node values with `Q(n, w) = g V(child)` inside actions (`g = γ_w`
/// for the naive backup, 1 otherwise) and `Q = R + γ_a V(root(o'))` on boundary edges
/// (`R` when terminal). Node values aggregate by `max`, or for the soft variant by
/// `β ln E_{w~π̄}[exp(Q/β)]` with `π̄` uniform over the node's legal tokens.
/// The action-level mode iterates observation values directly.
pub fn value_iteration_with(
    model: &PrefixModel,
    mode: BackupMode,
    opts: &DpOptions,
) -> Result<DpResult, OracleError> {
    mode.validate()?;
    check_tol(opts)?;
    let gamma_a = mode.gamma_a;
    if let BackupVariant::ActionLevel = mode.variant {
        return action_iteration(model, mode, 0.0, opts);
    }
    let g = mode.intra_discount();
    let beta = match mode.variant {
        BackupVariant::SoftBad { beta } => beta,
        _ => 0.0,
    };
    let n = model.node_count();
    let exec = exec_for(n, opts.exec);
    let (v, iterations, residual) = iterate(vec![opts.init; n], opts, |v| {
        map_range(exec, n, |i| {
            let k = model.nodes[i].edges.len();
            aggregate((0..k).map(|e| edge_q(model, v, i, e, g, gamma_a)), beta)
        })
    })?;
    let q_token: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..model.nodes[i].edges.len())
                .map(|e| edge_q(model, &v, i, e, g, gamma_a))
                .collect()
        })
        .collect();
    let q_action = model
        .actions
        .iter()
        .map(|row| {
            row.iter()
                .map(|a| {
                    let &(node, e) = a.path.last().expect("non-empty action");
                    q_token[node][e]
                })
                .collect()
        })
        .collect();
    Ok(DpResult {
        mode,
        node_values: v,
        q_token,
        q_action,
        iterations,
        residual,
        fingerprint: model.fingerprint().to_string(),
    })
}

/// Action-level soft value iteration against the product reference induced by uniform
/// per-token references: `V(o) = β ln Σ_a π̄(a|o) exp(Q(o,a)/β)`, `Q(o,a) = R + γ_a V(o')`.
///
/// `beta == 0` gives the hard action-level fixed point.
pub fn soft_action_iteration(
    model: &PrefixModel,
    beta: f64,
    gamma_a: f64,
    opts: &DpOptions,
) -> Result<DpResult, OracleError> {
    let mode = BackupMode::soft_bad(beta, gamma_a);
    mode.validate()?;
    check_tol(opts)?;
    action_iteration(model, mode, beta, opts)
}

fn reference_logprob(model: &PrefixModel, path: &[(usize, usize)]) -> f64 {
    path.iter()
        .map(|&(n, _)| -(model.nodes[n].edges.len() as f64).ln())
        .sum()
}

fn action_iteration(
    model: &PrefixModel,
    mode: BackupMode,
    beta: f64,
    opts: &DpOptions,
) -> Result<DpResult, OracleError> {
    let gamma_a = mode.gamma_a;
    let n_obs = model.observation_count();
    let ref_lp: Vec<Vec<f64>> = model
        .actions
        .iter()
        .map(|row| row.iter().map(|a| reference_logprob(model, &a.path)).collect())
        .collect();
    let q_of = |w: &[f64], o: usize, a: usize| {
        let info = &model.actions[o][a];
        match info.next {
            Some(nx) => info.reward + gamma_a * w[nx],
            None => info.reward,
        }
    };
    let soft = |w: &[f64], o: usize| {
        let row = &model.actions[o];
        let qs: Vec<f64> = (0..row.len()).map(|a| q_of(w, o, a)).collect();
        let m = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if beta == 0.0 {
            return m;
        }
        let s: f64 = qs
            .iter()
            .zip(&ref_lp[o])
            .map(|(q, lp)| (lp + (q - m) / beta).exp())
            .sum();
        m + beta * s.ln()
    };
    let exec = exec_for(n_obs, opts.exec);
    let (w, iterations, residual) =
        iterate(vec![opts.init; n_obs], opts, |w| map_range(exec, n_obs, |o| soft(w, o)))?;
    let q_action: Vec<Vec<f64>> = (0..n_obs)
        .map(|o| (0..model.actions[o].len()).map(|a| q_of(&w, o, a)).collect())
        .collect();
    let q_token = completion_max(model, &q_action);
    let mut node_values: Vec<f64> = q_token
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    for (o, &r) in model.roots.iter().enumerate() {
        node_values[r] = w[o];
    }
    Ok(DpResult {
        mode,
        node_values,
        q_token,
        q_action,
        iterations,
        residual,
        fingerprint: model.fingerprint().to_string(),
    })
}

/// Per `(node, edge)`: the best action-level value among actions completing through it.
pub fn completion_max(model: &PrefixModel, q_action: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut best: Vec<Vec<f64>> = model
        .nodes
        .iter()
        .map(|n| vec![f64::NEG_INFINITY; n.edges.len()])
        .collect();
    for (o, row) in model.actions.iter().enumerate() {
        for (a, info) in row.iter().enumerate() {
            for &(n, e) in &info.path {
                best[n][e] = best[n][e].max(q_action[o][a]);
            }
        }
    }
    best
}
