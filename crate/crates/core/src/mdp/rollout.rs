use crate::rng::{derive_seed, TokenRng, STEP_STRIDE};

use super::{
    Action, ActionFormat, ActionTrie, Environment, MdpError, Observation, StepRecord, TokenId,
    Trajectory,
};

/// An autoregressive token distribution `π(w | o, w^{1:j})`.
pub trait TokenPolicy: Sync {
    fn vocab_size(&self) -> usize;

    /// Next-token probabilities; masked-out tokens must receive exactly zero.
    fn token_probs(&self, obs: &Observation, prefix: &[TokenId], mask: Option<&[bool]>)
        -> Vec<f64>;
}

/// Value of the decision context `(obs, context)`, i.e. before the next token is emitted.
pub trait TokenValueFn: Sync {
    fn value(&self, obs: &Observation, context: &[TokenId]) -> f64;
}

impl<F> TokenValueFn for F
where
    F: Fn(&Observation, &[TokenId]) -> f64 + Sync,
{
    fn value(&self, obs: &Observation, context: &[TokenId]) -> f64 {
        self(obs, context)
    }
}

/// Which distribution actions are drawn from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Token by token from the autoregressive policy.
    #[default]
    Tokenwise,
    /// One draw from the length-normalised distribution over legal actions.
    Normalized,
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    pub gamma_a: f64,
    /// Restrict each token to those that extend a legal action.
    pub use_mask: bool,
    pub sampling: Sampling,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            gamma_a: 0.95,
            use_mask: true,
            sampling: Sampling::Tokenwise,
        }
    }
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = None;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = Some(i);
        if u < acc {
            return i;
        }
    }
    last.expect("distribution has no positive mass")
}

/// Per-token log-probabilities of `action` under `policy`, with trie masks when given.
pub fn action_token_logprobs<P: TokenPolicy + ?Sized>(
    policy: &P,
    obs: &Observation,
    action: &Action,
    trie: Option<&ActionTrie>,
) -> Vec<f64> {
    let v = policy.vocab_size();
    (0..action.len())
        .map(|j| {
            let prefix = action.prefix(j);
            let mask = trie.map(|t| t.mask(prefix, v));
            let p = policy.token_probs(obs, prefix, mask.as_deref());
            p[action.tokens()[j]].ln()
        })
        .collect()
}

/// Length-normalised action distribution: softmax over `log π(a|o) / |a|` for legal `a`.
pub fn normalized_action_dist<P: TokenPolicy + ?Sized>(
    policy: &P,
    obs: &Observation,
    legal: &[Action],
    trie: Option<&ActionTrie>,
) -> Vec<f64> {
    let logprobs: Vec<f64> = legal
        .iter()
        .map(|a| action_token_logprobs(policy, obs, a, trie).iter().sum())
        .collect();
    let lens: Vec<usize> = legal.iter().map(Action::len).collect();
    length_normalized_softmax(&logprobs, &lens)
}

/// Softmax over `logprobs[i] / lens[i]`.
pub fn length_normalized_softmax(logprobs: &[f64], lens: &[usize]) -> Vec<f64> {
    let scores: Vec<f64> = logprobs
        .iter()
        .zip(lens)
        .map(|(lp, &l)| lp / l as f64)
        .collect();
    softmax(&scores)
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Draws one action for environment step `step` of the worker owning `rng`.
///
/// Returns the action and its per-token log-probabilities under the token policy.
#[allow(clippy::too_many_arguments)]
pub fn sample_action<P: TokenPolicy + ?Sized>(
    format: ActionFormat,
    policy: &P,
    obs: &Observation,
    legal: &[Action],
    trie: &ActionTrie,
    rng: &mut TokenRng,
    step: u64,
    opts: &RolloutOptions,
) -> Result<(Action, Vec<f64>), MdpError> {
    let mask_trie = opts.use_mask.then_some(trie);
    if opts.sampling == Sampling::Normalized {
        let dist = normalized_action_dist(policy, obs, legal, mask_trie);
        let idx = inverse_cdf(&dist, rng.uniform(step, 0));
        let action = legal[idx].clone();
        let lps = action_token_logprobs(policy, obs, &action, mask_trie);
        return Ok((action, lps));
    }

    let v = policy.vocab_size();
    let max_len = format.max_action_len();
    assert!((max_len as u64) < STEP_STRIDE, "max_action_len too large");
    let mut tokens: Vec<TokenId> = Vec::with_capacity(max_len);
    let mut lps = Vec::with_capacity(max_len);
    loop {
        let mask = mask_trie.map(|t| t.mask(&tokens, v));
        let probs = policy.token_probs(obs, &tokens, mask.as_deref());
        let tok = inverse_cdf(&probs, rng.uniform(step, tokens.len() as u64));
        lps.push(probs[tok].ln());
        tokens.push(tok);
        let finished = if opts.use_mask {
            trie.allowed(&tokens).is_empty()
        } else {
            match format {
                ActionFormat::Delimited { eoa, .. } => tok == eoa,
                ActionFormat::Fixed { len } => tokens.len() == len,
            }
        };
        if finished {
            break;
        }
        if tokens.len() >= max_len {
            return Err(MdpError::TruncatedAction {
                partial: tokens,
                max_len,
            });
        }
    }
    Ok((Action::new(tokens)?, lps))
}

fn position_values(
    critic: Option<&dyn TokenValueFn>,
    obs: &Observation,
    action: &Action,
    next_obs: &Observation,
    done: bool,
) -> Vec<f64> {
    let n = action.len();
    match critic {
        None => vec![0.0; n + 1],
        Some(c) => {
            let mut v: Vec<f64> = (0..n).map(|j| c.value(obs, action.prefix(j))).collect();
            v.push(if done { 0.0 } else { c.value(next_obs, &[]) });
            v
        }
    }
}

/// One episode (at most `max_steps` steps) with default options and no critic.
pub fn collect_rollout<E, P>(
    env: &mut E,
    policy: &P,
    max_steps: usize,
    seed: u64,
) -> Result<Trajectory, MdpError>
where
    E: Environment + ?Sized,
    P: TokenPolicy + ?Sized,
{
    collect_rollout_with(env, policy, None, &RolloutOptions::default(), max_steps, seed)
}

/// One episode from `env.reset(seed)`, sampling on worker stream 0 of `seed`.
pub fn collect_rollout_with<E, P>(
    env: &mut E,
    policy: &P,
    critic: Option<&dyn TokenValueFn>,
    opts: &RolloutOptions,
    max_steps: usize,
    seed: u64,
) -> Result<Trajectory, MdpError>
where
    E: Environment + ?Sized,
    P: TokenPolicy + ?Sized,
{
    if max_steps == 0 {
        return Err(MdpError::ZeroSteps);
    }
    let mut rng = TokenRng::new(seed, 0);
    let mut obs = env.reset(seed);
    let mut steps = Vec::new();
    for t in 0..max_steps {
        let legal = env.legal_actions(&obs);
        let trie = ActionTrie::new(&legal);
        let (action, lps) = sample_action(
            env.action_format(),
            policy,
            &obs,
            &legal,
            &trie,
            &mut rng,
            t as u64,
            opts,
        )?;
        let out = env.step(&action)?;
        let token_values = position_values(critic, &obs, &action, &out.obs, out.done);
        steps.push(StepRecord {
            obs: obs.clone(),
            action,
            reward: out.reward,
            next_obs: out.obs.clone(),
            done: out.done,
            token_logprobs: lps,
            token_values,
        });
        if out.done {
            break;
        }
        obs = out.obs;
    }
    Trajectory::new(steps, opts.gamma_a)
}

/// Summary of a finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStats {
    pub worker: usize,
    pub episode: u64,
    pub length: usize,
    pub episode_return: f64,
    pub discounted_return: f64,
}

/// Steps gathered by one worker in one collection phase.
#[derive(Clone, Debug, Default)]
pub struct WorkerBatch {
    /// Contiguous per-episode slices; only the last may be non-terminal.
    pub segments: Vec<Trajectory>,
    /// Legal action lists, aligned with each segment's steps.
    pub legal: Vec<Vec<Vec<Action>>>,
    pub episodes: Vec<EpisodeStats>,
}

/// A persistent environment worker whose episodes continue across collection phases.
///
/// Episode `e` of worker `w` resets with `derive_seed(seed, [w, e])`; sampling uses
/// stream `w` of `seed`, addressed by the worker's running step counter.
pub struct RolloutWorker {
    env: Box<dyn Environment>,
    worker: usize,
    seed: u64,
    rng: TokenRng,
    obs: Observation,
    steps_taken: u64,
    episode: u64,
    ep_len: usize,
    ep_return: f64,
    ep_discounted: f64,
    ep_discount: f64,
}

impl RolloutWorker {
    pub fn new(mut env: Box<dyn Environment>, seed: u64, worker: usize) -> Self {
        let obs = env.reset(derive_seed(seed, &[worker as u64, 0]));
        Self {
            env,
            worker,
            seed,
            rng: TokenRng::new(seed, worker as u64),
            obs,
            steps_taken: 0,
            episode: 0,
            ep_len: 0,
            ep_return: 0.0,
            ep_discounted: 0.0,
            ep_discount: 1.0,
        }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn collect<P: TokenPolicy + ?Sized>(
        &mut self,
        policy: &P,
        critic: Option<&dyn TokenValueFn>,
        n_steps: usize,
        opts: &RolloutOptions,
    ) -> Result<WorkerBatch, MdpError> {
        let mut out = WorkerBatch::default();
        let mut steps = Vec::new();
        let mut legal_rows = Vec::new();
        for _ in 0..n_steps {
            let legal = self.env.legal_actions(&self.obs);
            let trie = ActionTrie::new(&legal);
            let (action, lps) = sample_action(
                self.env.action_format(),
                policy,
                &self.obs,
                &legal,
                &trie,
                &mut self.rng,
                self.steps_taken,
                opts,
            )?;
            self.steps_taken += 1;
            let res = self.env.step(&action)?;
            let token_values = position_values(critic, &self.obs, &action, &res.obs, res.done);
            self.ep_len += 1;
            self.ep_return += res.reward;
            self.ep_discounted += self.ep_discount * res.reward;
            self.ep_discount *= opts.gamma_a;
            steps.push(StepRecord {
                obs: self.obs.clone(),
                action,
                reward: res.reward,
                next_obs: res.obs.clone(),
                done: res.done,
                token_logprobs: lps,
                token_values,
            });
            legal_rows.push(legal);
            if res.done {
                out.segments
                    .push(Trajectory::new(std::mem::take(&mut steps), opts.gamma_a)?);
                out.legal.push(std::mem::take(&mut legal_rows));
                out.episodes.push(EpisodeStats {
                    worker: self.worker,
                    episode: self.episode,
                    length: self.ep_len,
                    episode_return: self.ep_return,
                    discounted_return: self.ep_discounted,
                });
                self.episode += 1;
                self.ep_len = 0;
                self.ep_return = 0.0;
                self.ep_discounted = 0.0;
                self.ep_discount = 1.0;
                self.obs = self
                    .env
                    .reset(derive_seed(self.seed, &[self.worker as u64, self.episode]));
            } else {
                self.obs = res.obs;
            }
        }
        if !steps.is_empty() {
            out.segments.push(Trajectory::new(steps, opts.gamma_a)?);
            out.legal.push(legal_rows);
        }
        Ok(out)
    }
}

/// One token emission, in `(t, j)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenTransition {
    pub step: usize,
    /// 1-based token position within the action.
    pub position: usize,
    pub obs: Observation,
    pub prefix: Vec<TokenId>,
    pub token: TokenId,
    pub is_action_final: bool,
    pub reward: Option<f64>,
    pub next_obs: Option<Observation>,
}

/// Expands a trajectory into token transitions; only action-final ones carry the reward.
pub fn flatten_to_token_transitions(traj: &Trajectory) -> Vec<TokenTransition> {
    let mut out = Vec::with_capacity(traj.token_count());
    for (t, s) in traj.steps().iter().enumerate() {
        let n = s.action.len();
        for j in 0..n {
            let last = j + 1 == n;
            out.push(TokenTransition {
                step: t,
                position: j + 1,
                obs: s.obs.clone(),
                prefix: s.action.prefix(j).to_vec(),
                token: s.action.tokens()[j],
                is_action_final: last,
                reward: last.then_some(s.reward),
                next_obs: last.then(|| s.next_obs.clone()),
            });
        }
    }
    out
}
