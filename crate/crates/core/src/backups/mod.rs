//! Backup operators mapping trajectories plus a value function to per-token targets.
//!
//! Value rows follow the context convention of [`StepRecord`]: for a step with action `a`,
//! `row[j]` (`j < |a|`) is the value of the context `(o, a[..j])` in which token `j + 1`
//! is emitted, and `row[|a|]` is the bootstrap `V(o', ∅)` (ignored when the step is
//! terminal). Token `j + 1` therefore owns residual `target_j - row[j]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{Observation, StepRecord, TokenId, TokenPolicy, TokenValueFn, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackupError {
    #[error("invalid backup configuration: {0}")]
    Config(String),
    #[error("KL divergence undefined: reference assigns zero mass to token {token}")]
    DivergenceUndefined { token: TokenId },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackupVariant {
    ActionLevel,
    NaiveToken { gamma_w: f64 },
    Bad,
    SoftBad { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackupMode {
    pub variant: BackupVariant,
    pub gamma_a: f64,
}

impl BackupMode {
    pub fn action_level(gamma_a: f64) -> Self {
        Self {
            variant: BackupVariant::ActionLevel,
            gamma_a,
        }
    }

    pub fn naive(gamma_w: f64, gamma_a: f64) -> Self {
        Self {
            variant: BackupVariant::NaiveToken { gamma_w },
            gamma_a,
        }
    }

    pub fn bad(gamma_a: f64) -> Self {
        Self {
            variant: BackupVariant::Bad,
            gamma_a,
        }
    }

    pub fn soft_bad(beta: f64, gamma_a: f64) -> Self {
        Self {
            variant: BackupVariant::SoftBad { beta },
            gamma_a,
        }
    }

    pub fn validate(&self) -> Result<(), BackupError> {
        check_gamma_a(self.gamma_a)?;
        match self.variant {
            BackupVariant::NaiveToken { gamma_w } => check_gamma_w(gamma_w),
            BackupVariant::SoftBad { beta } if !(beta >= 0.0 && beta.is_finite()) => {
                Err(BackupError::Config(format!("beta {beta} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    /// Discount applied between consecutive tokens of one action.
    pub fn intra_discount(&self) -> f64 {
        match self.variant {
            BackupVariant::NaiveToken { gamma_w } => gamma_w,
            _ => 1.0,
        }
    }

    pub fn label(&self) -> String {
        match self.variant {
            BackupVariant::ActionLevel => "action".into(),
            BackupVariant::NaiveToken { gamma_w } => format!("naive({gamma_w})"),
            BackupVariant::Bad => "bad".into(),
            BackupVariant::SoftBad { beta } => format!("sbad({beta})"),
        }
    }
}

fn check_gamma_a(g: f64) -> Result<(), BackupError> {
    if g > 0.0 && g <= 1.0 {
        Ok(())
    } else {
        Err(BackupError::Config(format!("gamma_a {g} outside (0, 1]")))
    }
}

fn check_gamma_w(g: f64) -> Result<(), BackupError> {
    if (0.0..=1.0).contains(&g) {
        Ok(())
    } else {
        Err(BackupError::Config(format!("gamma_w {g} outside [0, 1]")))
    }
}

fn check_lambda(l: f64) -> Result<(), BackupError> {
    if (0.0..=1.0).contains(&l) {
        Ok(())
    } else {
        Err(BackupError::Config(format!("lambda {l} outside [0, 1]")))
    }
}

/// Per-token targets and advantages in flatten order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenTargets {
    pub value_targets: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `offsets[t]` is the flat index of step `t`'s first token; the last entry is the total.
    pub offsets: Vec<usize>,
}

impl TokenTargets {
    pub fn len(&self) -> usize {
        self.value_targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value_targets.is_empty()
    }

    /// Entries for `(t, j)`, `j` 0-based.
    pub fn get(&self, t: usize, j: usize) -> (f64, f64) {
        let k = self.offsets[t] + j;
        (self.value_targets[k], self.advantages[k])
    }

    pub fn step_range(&self, t: usize) -> std::ops::Range<usize> {
        self.offsets[t]..self.offsets[t + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.value_targets
            .iter()
            .chain(&self.advantages)
            .all(|x| x.is_finite())
    }
}

fn offsets(traj: &Trajectory) -> Vec<usize> {
    let mut o = Vec::with_capacity(traj.len() + 1);
    let mut acc = 0;
    o.push(0);
    for s in traj.steps() {
        acc += s.action.len();
        o.push(acc);
    }
    o
}

/// Evaluates `v` on every context of every step plus the bootstrap slot (0 when terminal).
pub fn value_rows(traj: &Trajectory, v: &dyn TokenValueFn) -> Vec<Vec<f64>> {
    traj.steps().iter().map(|s| step_row(s, v)).collect()
}

fn step_row(s: &StepRecord, v: &dyn TokenValueFn) -> Vec<f64> {
    let n = s.action.len();
    let mut row: Vec<f64> = (0..n).map(|j| v.value(&s.obs, s.action.prefix(j))).collect();
    row.push(if s.done { 0.0 } else { v.value(&s.next_obs, &[]) });
    row
}

/// The values cached in the trajectory at sampling time.
pub fn stored_rows(traj: &Trajectory) -> Vec<Vec<f64>> {
    traj.steps().iter().map(|s| s.token_values.clone()).collect()
}

fn check_rows(traj: &Trajectory, rows: &[Vec<f64>]) -> Result<(), BackupError> {
    if rows.len() != traj.len() {
        return Err(BackupError::Config(format!(
            "{} value rows for {} steps",
            rows.len(),
            traj.len()
        )));
    }
    for (t, (s, r)) in traj.steps().iter().zip(rows).enumerate() {
        if r.len() != s.action.len() + 1 {
            return Err(BackupError::Config(format!(
                "value row {t} has {} entries, expected {}",
                r.len(),
                s.action.len() + 1
            )));
        }
    }
    Ok(())
}

fn boundary_target(s: &StepRecord, bootstrap: f64, gamma_a: f64) -> f64 {
    if s.done {
        s.reward
    } else {
        s.reward + gamma_a * bootstrap
    }
}

/// Action-level targets `R + γ_a V(o')` (just `R` when terminal), with `V(o) = v(o, ∅)`.
pub fn action_targets(traj: &Trajectory, v: &dyn TokenValueFn, gamma_a: f64) -> Vec<f64> {
    traj.steps()
        .iter()
        .map(|s| {
            let boot = if s.done { 0.0 } else { v.value(&s.next_obs, &[]) };
            boundary_target(s, boot, gamma_a)
        })
        .collect()
}

/// Naive token-level targets: `γ_w V(next context)` inside actions, `R + γ_a V(o', ∅)` at
/// the boundary.
pub fn naive_token_targets(
    traj: &Trajectory,
    v: &dyn TokenValueFn,
    gamma_w: f64,
    gamma_a: f64,
) -> Result<TokenTargets, BackupError> {
    naive_token_targets_from_rows(traj, &value_rows(traj, v), gamma_w, gamma_a)
}

pub fn naive_token_targets_from_rows(
    traj: &Trajectory,
    rows: &[Vec<f64>],
    gamma_w: f64,
    gamma_a: f64,
) -> Result<TokenTargets, BackupError> {
    check_gamma_w(gamma_w)?;
    check_gamma_a(gamma_a)?;
    check_rows(traj, rows)?;
    Ok(one_step(traj, rows, gamma_a, |next| gamma_w * next))
}

/// Action-decomposed targets: `V(next context)` undiscounted inside actions,
/// `R + γ_a V(o', ∅)` at the boundary.
pub fn bad_targets(
    traj: &Trajectory,
    v: &dyn TokenValueFn,
    gamma_a: f64,
) -> Result<TokenTargets, BackupError> {
    bad_targets_from_rows(traj, &value_rows(traj, v), gamma_a)
}

pub fn bad_targets_from_rows(
    traj: &Trajectory,
    rows: &[Vec<f64>],
    gamma_a: f64,
) -> Result<TokenTargets, BackupError> {
    check_gamma_a(gamma_a)?;
    check_rows(traj, rows)?;
    Ok(one_step(traj, rows, gamma_a, |next| next))
}

/// Mode-dispatched one-step targets; residuals go in `advantages`.
pub fn token_targets_from_rows(
    traj: &Trajectory,
    rows: &[Vec<f64>],
    mode: &BackupMode,
) -> Result<TokenTargets, BackupError> {
    mode.validate()?;
    match mode.variant {
        BackupVariant::Bad => bad_targets_from_rows(traj, rows, mode.gamma_a),
        BackupVariant::NaiveToken { gamma_w } => {
            naive_token_targets_from_rows(traj, rows, gamma_w, mode.gamma_a)
        }
        BackupVariant::ActionLevel => {
            check_rows(traj, rows)?;
            let mut out = TokenTargets {
                offsets: offsets(traj),
                ..TokenTargets::default()
            };
            for (s, row) in traj.steps().iter().zip(rows) {
                let target = boundary_target(s, row[s.action.len()], mode.gamma_a);
                for _ in 0..s.action.len() {
                    out.value_targets.push(target);
                    out.advantages.push(target - row[0]);
                }
            }
            Ok(out)
        }
        BackupVariant::SoftBad { .. } => Err(BackupError::Config(
            "soft targets need a Q function and policies; use sbad_targets".into(),
        )),
    }
}

fn one_step(
    traj: &Trajectory,
    rows: &[Vec<f64>],
    gamma_a: f64,
    intra: impl Fn(f64) -> f64,
) -> TokenTargets {
    let mut out = TokenTargets {
        offsets: offsets(traj),
        value_targets: Vec::with_capacity(traj.token_count()),
        advantages: Vec::with_capacity(traj.token_count()),
    };
    for (s, row) in traj.steps().iter().zip(rows) {
        let n = s.action.len();
        for j in 0..n {
            let target = if j + 1 < n {
                intra(row[j + 1])
            } else {
                boundary_target(s, row[n], gamma_a)
            };
            out.value_targets.push(target);
            out.advantages.push(target - row[j]);
        }
    }
    out
}

/// Token-level GAE over the flattened token chain.
///
/// Consecutive tokens of one action are linked with discount 1 (BAD) or `γ_w` (naive);
/// an action's last token links to the next action's first with `γ_a` (0 if terminal).
/// `value_targets` holds the one-step targets of `mode`.
pub fn gae_token_advantages(
    traj: &Trajectory,
    v: &dyn TokenValueFn,
    mode: &BackupMode,
    lambda: f64,
) -> Result<TokenTargets, BackupError> {
    gae_token_advantages_from_rows(traj, &value_rows(traj, v), mode, lambda)
}

pub fn gae_token_advantages_from_rows(
    traj: &Trajectory,
    rows: &[Vec<f64>],
    mode: &BackupMode,
    lambda: f64,
) -> Result<TokenTargets, BackupError> {
    check_lambda(lambda)?;
    if let BackupVariant::ActionLevel = mode.variant {
        check_rows(traj, rows)?;
        let vals: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let boots: Vec<f64> = traj
            .steps()
            .iter()
            .zip(rows)
            .map(|(s, r)| r[s.action.len()])
            .collect();
        let adv = gae_action_advantages(traj, &vals, &boots, mode.gamma_a, lambda)?;
        let mut out = token_targets_from_rows(traj, rows, mode)?;
        for (t, a) in adv.iter().enumerate() {
            for k in out.step_range(t) {
                out.advantages[k] = *a;
            }
        }
        return Ok(out);
    }
    let mut out = token_targets_from_rows(traj, rows, mode)?;
    let g = mode.intra_discount();
    let mut next_adv = 0.0;
    for (t, s) in traj.steps().iter().enumerate().rev() {
        let n = s.action.len();
        let boundary = if s.done { 0.0 } else { mode.gamma_a };
        for j in (0..n).rev() {
            let k = out.offsets[t] + j;
            let d = if j + 1 < n { g } else { boundary };
            let a = out.advantages[k] + lambda * d * next_adv;
            out.advantages[k] = a;
            next_adv = a;
        }
    }
    Ok(out)
}

/// Action-level GAE. `values[t] = V(o_t)`, `bootstraps[t] = V(o_{t+1})` (unused if terminal).
pub fn gae_action_advantages(
    traj: &Trajectory,
    values: &[f64],
    bootstraps: &[f64],
    gamma_a: f64,
    lambda: f64,
) -> Result<Vec<f64>, BackupError> {
    check_gamma_a(gamma_a)?;
    check_lambda(lambda)?;
    if values.len() != traj.len() || bootstraps.len() != traj.len() {
        return Err(BackupError::Config("value/bootstrap length mismatch".into()));
    }
    let mut adv = vec![0.0; traj.len()];
    let mut next = 0.0;
    for (t, s) in traj.steps().iter().enumerate().rev() {
        let delta = boundary_target(s, bootstraps[t], gamma_a) - values[t];
        let d = if s.done { 0.0 } else { gamma_a };
        next = delta + lambda * d * next;
        adv[t] = next;
    }
    Ok(adv)
}

/// Token-level action values `Q(o, context, w)`.
pub trait TokenQFn: Sync {
    fn q(&self, obs: &Observation, context: &[TokenId], token: TokenId) -> f64;
}

impl<F> TokenQFn for F
where
    F: Fn(&Observation, &[TokenId], TokenId) -> f64 + Sync,
{
    fn q(&self, obs: &Observation, context: &[TokenId], token: TokenId) -> f64 {
        self(obs, context, token)
    }
}

/// Exact `KL(p ‖ q) = Σ p ln(p / q)` over the vocabulary.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, BackupError> {
    if p.len() != q.len() {
        return Err(BackupError::Config("distribution length mismatch".into()));
    }
    let mut kl = 0.0;
    for (token, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(BackupError::DivergenceUndefined { token });
            }
            kl += pi * (pi / qi).ln();
        }
    }
    Ok(kl)
}

/// `E_{w~π}[Q(w)] − β KL(π ‖ π̄)`.
pub fn soft_value(pi: &[f64], q: &[f64], reference: &[f64], beta: f64) -> Result<f64, BackupError> {
    let expected: f64 = pi
        .iter()
        .zip(q)
        .filter(|(&p, _)| p > 0.0)
        .map(|(p, q)| p * q)
        .sum();
    if beta == 0.0 {
        kl_divergence(pi, reference)?;
        return Ok(expected);
    }
    Ok(expected - beta * kl_divergence(pi, reference)?)
}

fn soft_context_value(
    q: &dyn TokenQFn,
    policy: &dyn TokenPolicy,
    reference: &dyn TokenPolicy,
    beta: f64,
    obs: &Observation,
    context: &[TokenId],
) -> Result<f64, BackupError> {
    let pi = policy.token_probs(obs, context, None);
    let pr = reference.token_probs(obs, context, None);
    let qs: Vec<f64> = (0..pi.len())
        .map(|w| if pi[w] > 0.0 { q.q(obs, context, w) } else { 0.0 })
        .collect();
    soft_value(&pi, &qs, &pr, beta)
}

/// Soft action-decomposed targets.
///
/// Inside an action the target of token `j + 1` is the soft value of the next context,
/// `E_{w~π}[Q(o, a[..j+1], w)] − β KL(π ‖ π̄)(o, a[..j+1])`; at the boundary it is
/// `R + γ_a` times the soft value of `(o', ∅)`. `advantages` holds the residual
/// `target − Q(o, a[..j], a_{j+1})`.
pub fn sbad_targets(
    traj: &Trajectory,
    q: &dyn TokenQFn,
    policy: &dyn TokenPolicy,
    reference: &dyn TokenPolicy,
    beta: f64,
    gamma_a: f64,
) -> Result<TokenTargets, BackupError> {
    BackupMode::soft_bad(beta, gamma_a).validate()?;
    let mut out = TokenTargets {
        offsets: offsets(traj),
        ..TokenTargets::default()
    };
    for s in traj.steps() {
        let n = s.action.len();
        for j in 0..n {
            let target = if j + 1 < n {
                soft_context_value(q, policy, reference, beta, &s.obs, s.action.prefix(j + 1))?
            } else if s.done {
                s.reward
            } else {
                s.reward + gamma_a * soft_context_value(q, policy, reference, beta, &s.next_obs, &[])?
            };
            out.value_targets.push(target);
            out.advantages
                .push(target - q.q(&s.obs, s.action.prefix(j), s.action.tokens()[j]));
        }
    }
    Ok(out)
}
