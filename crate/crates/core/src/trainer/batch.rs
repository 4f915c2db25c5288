use serde::Serialize;

use crate::backups::{gae_token_advantages_from_rows, stored_rows, BackupMode, BackupVariant};
use crate::mdp::{Action, ActionTrie, Observation, WorkerBatch};
use crate::policy::AutoregressivePolicy;

use super::{AdvantageEstimator, TrainError};

/// One environment step, prepared for PPO updates.
#[derive(Clone, Debug, Serialize)]
pub struct BatchStep {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub legal: Vec<Action>,
    /// Per-position sampling masks, when the legal-token mask is on.
    pub masks: Option<Vec<Vec<bool>>>,
    /// Token log-probabilities recorded at collection.
    pub old_logprobs: Vec<f64>,
    /// Per-token advantages; for action-level PPO every entry is the action advantage.
    pub advantages: Vec<f64>,
    /// `ln π_norm(a | o)` under the collecting policy (action-level PPO only).
    pub old_action_logprob: f64,
}

impl BatchStep {
    pub fn mask(&self, j: usize) -> Option<&[bool]> {
        self.masks.as_ref().map(|m| m[j].as_slice())
    }
}

/// Flattens worker batches into steps and attaches advantages computed from the cached
/// critic values.
pub fn build_steps(
    batches: &[WorkerBatch],
    policy: &AutoregressivePolicy,
    mode: &BackupMode,
    estimator: AdvantageEstimator,
    lambda: f64,
    use_mask: bool,
) -> Result<Vec<BatchStep>, TrainError> {
    let lambda = match estimator {
        AdvantageEstimator::Gae => lambda,
        AdvantageEstimator::TdResidual => 0.0,
    };
    let action_level = matches!(mode.variant, BackupVariant::ActionLevel);
    let v = policy.vocab_size();
    let mut out = Vec::new();
    for b in batches {
        for (traj, legal) in b.segments.iter().zip(&b.legal) {
            let rows = stored_rows(traj);
            let tt = gae_token_advantages_from_rows(traj, &rows, mode, lambda)?;
            for (t, (s, legal)) in traj.steps().iter().zip(legal).enumerate() {
                let trie = ActionTrie::new(legal);
                let masks = use_mask.then(|| {
                    (0..s.action.len())
                        .map(|j| trie.mask(s.action.prefix(j), v))
                        .collect()
                });
                let old_action_logprob = if action_level {
                    normalized_logprob(policy, &s.obs, legal, &s.action)?
                } else {
                    0.0
                };
                out.push(BatchStep {
                    obs: s.obs.clone(),
                    action: s.action.clone(),
                    reward: s.reward,
                    next_obs: s.next_obs.clone(),
                    done: s.done,
                    legal: legal.clone(),
                    masks,
                    old_logprobs: s.token_logprobs.clone(),
                    advantages: tt.advantages[tt.step_range(t)].to_vec(),
                    old_action_logprob,
                });
            }
        }
    }
    Ok(out)
}

fn normalized_logprob(
    policy: &AutoregressivePolicy,
    obs: &Observation,
    legal: &[Action],
    action: &Action,
) -> Result<f64, TrainError> {
    let idx = legal
        .iter()
        .position(|a| a == action)
        .ok_or_else(|| TrainError::Config("sampled action is not in the legal list".into()))?;
    Ok(policy.twosome_action_dist(obs, legal)[idx].ln())
}

/// Standardises `xs` in place to zero mean and unit variance (`1e-8` floor on the std).
/// Fewer than two entries are left alone.
pub fn advantage_normalize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-8);
    for x in xs {
        *x = (*x - mean) / sd;
    }
}

/// Normalises the advantages of `steps` jointly: over tokens, or over steps when
/// `action_level`.
pub fn normalize_step_advantages(steps: &mut [BatchStep], action_level: bool) {
    let mut flat: Vec<f64> = if action_level {
        steps.iter().map(|s| s.advantages[0]).collect()
    } else {
        steps.iter().flat_map(|s| s.advantages.iter().copied()).collect()
    };
    advantage_normalize(&mut flat);
    let mut it = flat.into_iter();
    for s in steps {
        if action_level {
            let a = it.next().unwrap_or(0.0);
            s.advantages.iter_mut().for_each(|x| *x = a);
        } else {
            for x in &mut s.advantages {
                *x = it.next().unwrap_or(0.0);
            }
        }
    }
}
