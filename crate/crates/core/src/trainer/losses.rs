//! PPO losses with analytic gradients.
//!
//! Every function takes a minibatch of steps and returns the scalar loss together with
//! its gradient with respect to the live parameters.

use crate::backups::{BackupMode, BackupVariant};
use crate::mdp::ActionTrie;
use crate::policy::{masked_softmax, AutoregressivePolicy, TokenCritic};

use super::BatchStep;

#[derive(Clone, Debug, Default)]
pub struct CriticLoss {
    pub loss: f64,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct PolicyLoss {
    /// Total loss: clipped surrogate minus the entropy bonus.
    pub loss: f64,
    /// The surrogate part alone, `−(1/T) Σ_t (1/|a_t|) Σ_j min(…)`.
    pub surrogate: f64,
    /// Mean entropy per token (per step for action-level PPO).
    pub entropy: f64,
    /// Fraction of ratios outside `[1−ε, 1+ε]`.
    pub clip_frac: f64,
    pub grad: Vec<f64>,
}

/// Regression targets for each position of `s`, read from the target critic.
pub fn critic_targets(s: &BatchStep, critic: &TokenCritic, mode: &BackupMode) -> Vec<f64> {
    let boundary = if s.done {
        s.reward
    } else {
        s.reward + mode.gamma_a * critic.value(&s.next_obs, &[], true)
    };
    let n = s.action.len();
    if let BackupVariant::ActionLevel = mode.variant {
        return vec![boundary];
    }
    let g = mode.intra_discount();
    (0..n)
        .map(|j| {
            if j + 1 < n {
                g * critic.value(&s.obs, s.action.prefix(j + 1), true)
            } else {
                boundary
            }
        })
        .collect()
}

/// Token Bellman-error loss; action-level mode regresses only `V(o, ∅)`.
///
/// Targets use the target parameters, so the gradient flows only through the live values.
pub fn critic_loss(steps: &[&BatchStep], critic: &TokenCritic, mode: &BackupMode) -> CriticLoss {
    let mut out = CriticLoss {
        loss: 0.0,
        grad: vec![0.0; critic.model().len()],
    };
    if steps.is_empty() {
        return out;
    }
    let t = steps.len() as f64;
    for s in steps {
        let targets = critic_targets(s, critic, mode);
        let w = 1.0 / (t * targets.len() as f64);
        for (j, y) in targets.iter().enumerate() {
            let fwd = critic.forward(&s.obs, s.action.prefix(j));
            let e = fwd.out[0] - y;
            out.loss += w * e * e;
            critic.backward(&fwd, 2.0 * w * e, &mut out.grad);
        }
    }
    out
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// `dH/dz_i = −p_i (ln p_i + H)` for a softmax over logits `z`.
fn entropy_grad(p: &[f64], h: f64) -> impl Iterator<Item = f64> + '_ {
    p.iter()
        .map(move |&x| if x > 0.0 { -x * (x.ln() + h) } else { 0.0 })
}

/// Returns `(min(r·A, clip(r)·A), d/dr of it, clipped)`.
fn clipped_term(ratio: f64, adv: f64, eps: f64) -> (f64, f64, bool) {
    let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
    let outside = ratio != clipped_ratio;
    let (u, c) = (ratio * adv, clipped_ratio * adv);
    if u <= c {
        (u, adv, outside)
    } else {
        (c, 0.0, outside)
    }
}

/// Token-level clipped surrogate with per-action `1/|a|` weighting and an entropy bonus.
pub fn policy_loss(
    steps: &[&BatchStep],
    policy: &AutoregressivePolicy,
    clip_eps: f64,
    entropy_coef: f64,
) -> PolicyLoss {
    let mut out = PolicyLoss {
        grad: vec![0.0; policy.model().len()],
        ..Default::default()
    };
    if steps.is_empty() {
        return out;
    }
    let t = steps.len() as f64;
    let n_tok: usize = steps.iter().map(|s| s.action.len()).sum();
    let n_tok = n_tok as f64;
    let mut clipped = 0usize;
    for s in steps {
        let w = 1.0 / (t * s.action.len() as f64);
        for (j, &tok) in s.action.tokens().iter().enumerate() {
            let fwd = policy.forward(&s.obs, s.action.prefix(j));
            let p = masked_softmax(&fwd.out, s.mask(j));
            let ratio = (p[tok].ln() - s.old_logprobs[j]).exp();
            let (term, dterm, outside) = clipped_term(ratio, s.advantages[j], clip_eps);
            clipped += outside as usize;
            out.surrogate -= w * term;
            let h = entropy(&p);
            out.entropy += h / n_tok;
            // d(−w·term)/dz = −w·dterm·r·(e_tok − p); d(−c·h/N)/dz = −(c/N)·dH/dz.
            let c = -w * dterm * ratio;
            let mut dz: Vec<f64> = entropy_grad(&p, h)
                .zip(&p)
                .map(|(dh, &pi)| -entropy_coef / n_tok * dh - c * pi)
                .collect();
            dz[tok] += c;
            policy.model().backward(&fwd, &dz, &mut out.grad);
        }
    }
    out.loss = out.surrogate - entropy_coef * out.entropy;
    out.clip_frac = clipped as f64 / n_tok;
    out
}

/// An action's log-probability with each token's forward pass and mask.
type ScoredAction = (f64, Vec<(crate::policy::Forward, Vec<bool>)>);

/// Per-action token log-probabilities under the legal trie, with the forward passes kept.
fn legal_scores(
    policy: &AutoregressivePolicy,
    s: &BatchStep,
    trie: &ActionTrie,
) -> Vec<ScoredAction> {
    let v = policy.vocab_size();
    s.legal
        .iter()
        .map(|a| {
            let mut lp = 0.0;
            let mut cache = Vec::with_capacity(a.len());
            for (j, &tok) in a.tokens().iter().enumerate() {
                let fwd = policy.forward(&s.obs, a.prefix(j));
                let mask = trie.mask(a.prefix(j), v);
                lp += masked_softmax(&fwd.out, Some(&mask))[tok].ln();
                cache.push((fwd, mask));
            }
            (lp / a.len() as f64, cache)
        })
        .collect()
}

/// Action-level clipped surrogate over the length-normalised legal-action distribution.
///
/// Each step carries one advantage (`advantages[0]`) and `old_action_logprob`.
pub fn action_policy_loss(
    steps: &[&BatchStep],
    policy: &AutoregressivePolicy,
    clip_eps: f64,
    entropy_coef: f64,
) -> PolicyLoss {
    let mut out = PolicyLoss {
        grad: vec![0.0; policy.model().len()],
        ..Default::default()
    };
    if steps.is_empty() {
        return out;
    }
    let t = steps.len() as f64;
    let mut clipped = 0usize;
    for s in steps {
        let trie = ActionTrie::new(&s.legal);
        let scored = legal_scores(policy, s, &trie);
        let scores: Vec<f64> = scored.iter().map(|x| x.0).collect();
        let pi = masked_softmax(&scores, None);
        let k = s.legal.iter().position(|a| *a == s.action).unwrap_or(0);
        let ratio = (pi[k].ln() - s.old_action_logprob).exp();
        let (term, dterm, outside) = clipped_term(ratio, s.advantages[0], clip_eps);
        clipped += outside as usize;
        out.surrogate -= term / t;
        let h = entropy(&pi);
        out.entropy += h / t;
        let c = -dterm * ratio / t;
        let mut ds: Vec<f64> = entropy_grad(&pi, h)
            .zip(&pi)
            .map(|(dh, &p)| -entropy_coef / t * dh - c * p)
            .collect();
        ds[k] += c;
        for ((a, (_, cache)), d) in s.legal.iter().zip(&scored).zip(&ds) {
            let coef = d / a.len() as f64;
            for (&tok, (fwd, mask)) in a.tokens().iter().zip(cache) {
                policy.logprob_grad(fwd, Some(mask), tok, coef, &mut out.grad);
            }
        }
    }
    out.loss = out.surrogate - entropy_coef * out.entropy;
    out.clip_frac = clipped as f64 / t;
    out
}

/// Mean of `old − new` token log-probabilities.
pub fn token_approx_kl(steps: &[&BatchStep], policy: &AutoregressivePolicy) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in steps {
        for (j, &tok) in s.action.tokens().iter().enumerate() {
            let lp = policy.probs(&s.obs, s.action.prefix(j), s.mask(j))[tok].ln();
            sum += s.old_logprobs[j] - lp;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Mean of `old − new` normalised action log-probabilities.
pub fn action_approx_kl(steps: &[&BatchStep], policy: &AutoregressivePolicy) -> f64 {
    if steps.is_empty() {
        return 0.0;
    }
    let sum: f64 = steps
        .iter()
        .map(|s| {
            let k = s.legal.iter().position(|a| *a == s.action).unwrap_or(0);
            s.old_action_logprob - policy.twosome_action_dist(&s.obs, &s.legal)[k].ln()
        })
        .sum();
    sum / steps.len() as f64
}
