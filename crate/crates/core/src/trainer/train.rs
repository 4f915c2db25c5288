use std::collections::VecDeque;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::backups::BackupVariant;
use crate::envs::EnvError;
use crate::mdp::{Environment, RolloutOptions, RolloutWorker, Sampling, WorkerBatch};
use crate::par;
use crate::policy::{
    grad_step, write_checkpoint, Adam, AdamConfig, AutoregressivePolicy, Encoder, Model,
    PolicyError, TokenCritic,
};
use crate::rng::{derive_seed, seeded};

use super::losses::{
    action_approx_kl, action_policy_loss, critic_loss, policy_loss, token_approx_kl, PolicyLoss,
};
use super::{build_steps, normalize_step_advantages, Algo, BatchStep, TrainConfig, TrainError};

// Seed-derivation roots, kept apart from the (worker, episode) paths used by rollouts.
const ACTOR_INIT: u64 = 0xA000_0000_0000_0001;
const CRITIC_INIT: u64 = 0xA000_0000_0000_0002;
const SHUFFLE: u64 = 0xA000_0000_0000_0003;

pub const METRICS_HEADER: &str =
    "env_steps,update,mean_return,std_return,policy_loss,value_loss,entropy,approx_kl,clip_frac,seed";

/// One row of the metrics file. Returns are over the rolling episode window (NaN before
/// the first episode finishes).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub env_steps: usize,
    pub update: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub seed: u64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.env_steps,
            self.update,
            self.mean_return,
            self.std_return,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.approx_kl,
            self.clip_frac,
            self.seed
        )
    }
}

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.to_csv())?;
    }
    Ok(())
}

/// A finished episode. `env_steps` is the run's step count at the end of the collection
/// phase in which it finished.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeRecord {
    pub env_steps: usize,
    pub worker: usize,
    pub episode: u64,
    pub length: usize,
    pub episode_return: f64,
    pub discounted_return: f64,
}

pub struct RunArtifacts {
    pub metrics: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// Actor minibatch steps taken in each update (KL early stopping can cut this short).
    pub actor_steps: Vec<usize>,
    pub policy: AutoregressivePolicy,
    pub critic: TokenCritic,
}

impl RunArtifacts {
    /// Mean undiscounted return of episodes finishing in the last `frac` of training.
    pub fn tail_mean_return(&self, frac: f64) -> Option<f64> {
        let total = self.metrics.last()?.env_steps as f64;
        let cut = total * (1.0 - frac);
        let xs: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.env_steps as f64 > cut)
            .map(|e| e.episode_return)
            .collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Mean of `f` over the last `n` finished episodes.
    pub fn last_episodes_mean(&self, n: usize, f: impl Fn(&EpisodeRecord) -> f64) -> Option<f64> {
        let k = self.episodes.len().min(n);
        (k > 0).then(|| self.episodes[self.episodes.len() - k..].iter().map(f).sum::<f64>() / k as f64)
    }
}

/// Where checkpoints, the metrics file and failure dumps go. `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

pub type EnvFactory<'a> = dyn Fn() -> Result<Box<dyn Environment>, EnvError> + Sync + 'a;

pub fn train(cfg: &TrainConfig, env_factory: &EnvFactory) -> Result<RunArtifacts, TrainError> {
    train_with(cfg, env_factory, &TrainOutput::default())
}

#[derive(Default)]
struct UpdateStats {
    policy_loss: f64,
    entropy: f64,
    approx_kl: f64,
    clip_frac: f64,
    actor_steps: usize,
    value_loss: f64,
    critic_steps: usize,
}

pub fn train_with(
    cfg: &TrainConfig,
    env_factory: &EnvFactory,
    output: &TrainOutput,
) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    let mode = cfg.mode();
    mode.validate()?;
    let action_level = matches!(mode.variant, BackupVariant::ActionLevel);

    let mut workers = (0..cfg.rollout_threads)
        .map(|w| Ok(RolloutWorker::new(env_factory()?, cfg.seed, w)))
        .collect::<Result<Vec<_>, EnvError>>()?;
    let (encoder, vocab_hash) = {
        let env = workers[0].env();
        (
            Encoder::new(env.observation_count(), env.vocab().len(), env.max_action_len()),
            env.vocab().hash(),
        )
    };
    let mut policy = AutoregressivePolicy::new(
        cfg.backend,
        encoder.clone(),
        derive_seed(cfg.seed, &[ACTOR_INIT]),
    );
    let mut critic = TokenCritic::new(cfg.backend, encoder, derive_seed(cfg.seed, &[CRITIC_INIT]));
    let mut actor_opt = Adam::new(AdamConfig::new(cfg.actor_lr, Some(cfg.max_grad_norm)));
    let mut critic_opt = Adam::new(AdamConfig::new(cfg.critic_lr, Some(cfg.max_grad_norm)));
    let ropts = RolloutOptions {
        gamma_a: cfg.gamma_a,
        use_mask: cfg.use_mask,
        sampling: if cfg.algo == Algo::ActionPpo {
            Sampling::Normalized
        } else {
            Sampling::Tokenwise
        },
    };
    let per_worker: Vec<usize> = (0..cfg.rollout_threads)
        .map(|w| {
            cfg.batch_size / cfg.rollout_threads + usize::from(w < cfg.batch_size % cfg.rollout_threads)
        })
        .collect();
    if let Some(dir) = &output.dir {
        fs::create_dir_all(dir)?;
    }

    let n_updates = cfg.total_env_steps.div_ceil(cfg.batch_size);
    let mut env_steps = 0usize;
    let mut window: VecDeque<f64> = VecDeque::with_capacity(cfg.return_window);
    let mut art = RunArtifacts {
        metrics: Vec::with_capacity(n_updates),
        episodes: Vec::new(),
        checkpoints: Vec::new(),
        actor_steps: Vec::with_capacity(n_updates),
        policy: AutoregressivePolicy::from_model(Model::tabular(Encoder::new(1, 1, 1), 1)),
        critic: TokenCritic::from_model(Model::tabular(Encoder::new(1, 1, 1), 1)),
    };

    for update in 1..=n_updates {
        let batches: Vec<WorkerBatch> = {
            let (policy, view) = (&policy, critic.view(false));
            par::map_slice_mut(cfg.exec, &mut workers, |w, wk| {
                wk.collect(policy, Some(&view), per_worker[w], &ropts)
            })
            .into_iter()
            .collect::<Result<_, _>>()?
        };
        env_steps += cfg.batch_size;
        for b in &batches {
            for e in &b.episodes {
                if window.len() == cfg.return_window {
                    window.pop_front();
                }
                window.push_back(e.episode_return);
                art.episodes.push(EpisodeRecord {
                    env_steps,
                    worker: e.worker,
                    episode: e.episode,
                    length: e.length,
                    episode_return: e.episode_return,
                    discounted_return: e.discounted_return,
                });
            }
        }

        let mut steps = build_steps(&batches, &policy, &mode, cfg.advantage, cfg.lambda, cfg.use_mask)?;
        if cfg.normalize_advantages {
            normalize_step_advantages(&mut steps, action_level);
        }
        for s in &steps {
            for j in 0..s.action.len() {
                critic.ensure(&s.obs, s.action.prefix(j));
            }
            if action_level {
                for a in &s.legal {
                    for j in 0..a.len() {
                        policy.model_mut().ensure(&s.obs, a.prefix(j));
                    }
                }
            } else {
                for j in 0..s.action.len() {
                    policy.model_mut().ensure(&s.obs, s.action.prefix(j));
                }
            }
        }

        let stats = update_phase(
            cfg,
            update,
            &steps,
            &mut policy,
            &mut critic,
            &mut actor_opt,
            &mut critic_opt,
            output.dir.as_deref(),
        )?;

        art.actor_steps.push(stats.actor_steps);
        let (mean, sd) = mean_std(window.iter().copied());
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        art.metrics.push(MetricsRow {
            env_steps,
            update,
            mean_return: mean,
            std_return: sd,
            policy_loss: per(stats.policy_loss, stats.actor_steps),
            value_loss: per(stats.value_loss, stats.critic_steps),
            entropy: per(stats.entropy, stats.actor_steps),
            approx_kl: per(stats.approx_kl, stats.actor_steps),
            clip_frac: per(stats.clip_frac, stats.actor_steps),
            seed: cfg.seed,
        });

        if let Some(dir) = &output.dir {
            if cfg.checkpoint_every > 0 && (update % cfg.checkpoint_every == 0 || update == n_updates) {
                let cdir = dir.join("checkpoints");
                fs::create_dir_all(&cdir)?;
                for (name, model) in [("actor", policy.model()), ("critic", critic.model())] {
                    let path = cdir.join(format!("{name}_{update:06}.ckpt"));
                    let f = std::io::BufWriter::new(fs::File::create(&path)?);
                    write_checkpoint(f, model, &vocab_hash)?;
                    art.checkpoints.push(path);
                }
            }
        }
    }
    if let Some(dir) = &output.dir {
        let f = std::io::BufWriter::new(fs::File::create(dir.join("metrics.csv"))?);
        write_metrics_csv(f, &art.metrics)?;
    }
    art.policy = policy;
    art.critic = critic;
    Ok(art)
}

fn mean_std(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[allow(clippy::too_many_arguments)]
fn update_phase(
    cfg: &TrainConfig,
    update: usize,
    steps: &[BatchStep],
    policy: &mut AutoregressivePolicy,
    critic: &mut TokenCritic,
    actor_opt: &mut Adam,
    critic_opt: &mut Adam,
    dump_dir: Option<&Path>,
) -> Result<UpdateStats, TrainError> {
    let mode = cfg.mode();
    let action_level = cfg.algo == Algo::ActionPpo;
    let mb_size = steps.len() / cfg.num_mini_batch;
    let mut stats = UpdateStats::default();
    let mut actor_active = true;
    let mut order: Vec<usize> = (0..steps.len()).collect();
    for epoch in 0..cfg.ppo_epochs {
        order.shuffle(&mut seeded(derive_seed(cfg.seed, &[SHUFFLE, update as u64, epoch as u64])));
        for (mb_index, chunk) in order.chunks(mb_size).enumerate() {
            let mb: Vec<&BatchStep> = chunk.iter().map(|&i| &steps[i]).collect();
            let fail = |what: &str| {
                nan_failure(dump_dir, update, epoch, mb_index, what, &mb)
            };
            if actor_active {
                let PolicyLoss { loss, entropy, clip_frac, mut grad, .. } = if action_level {
                    action_policy_loss(&mb, policy, cfg.clip_eps, cfg.entropy_coef)
                } else {
                    policy_loss(&mb, policy, cfg.clip_eps, cfg.entropy_coef)
                };
                if !loss.is_finite() {
                    return Err(fail("policy_loss"));
                }
                match grad_step(policy.model_mut().params_mut(), &mut grad, actor_opt) {
                    Err(PolicyError::Numerical { .. }) => return Err(fail("policy_gradient")),
                    r => r?,
                };
                let kl = if action_level {
                    action_approx_kl(&mb, policy)
                } else {
                    token_approx_kl(&mb, policy)
                };
                stats.policy_loss += loss;
                stats.entropy += entropy;
                stats.clip_frac += clip_frac;
                stats.approx_kl += kl;
                stats.actor_steps += 1;
                if kl.abs() >= cfg.kl_threshold {
                    actor_active = false;
                }
            }
            let mut cl = critic_loss(&mb, critic, &mode);
            if !cl.loss.is_finite() {
                return Err(fail("critic_loss"));
            }
            cl.grad.iter_mut().for_each(|g| *g *= cfg.value_coef);
            match grad_step(critic.params_mut(), &mut cl.grad, critic_opt) {
                Err(PolicyError::Numerical { .. }) => return Err(fail("critic_gradient")),
                r => r?,
            };
            stats.value_loss += cl.loss;
            stats.critic_steps += 1;
        }
        critic.sync_target();
    }
    Ok(stats)
}

#[derive(Serialize)]
struct NanDump<'a> {
    update: usize,
    epoch: usize,
    minibatch: usize,
    quantity: &'a str,
    steps: &'a [&'a BatchStep],
}

fn nan_failure(
    dir: Option<&Path>,
    update: usize,
    epoch: usize,
    minibatch: usize,
    quantity: &str,
    steps: &[&BatchStep],
) -> TrainError {
    let dump = dir.and_then(|d| {
        let path = d.join(format!("nan_dump_update{update}.json"));
        let body = NanDump { update, epoch, minibatch, quantity, steps };
        let json = serde_json::to_string_pretty(&body).ok()?;
        fs::write(&path, json).ok()?;
        Some(path)
    });
    TrainError::NonFinite {
        quantity: quantity.to_string(),
        update,
        epoch,
        minibatch,
        dump,
    }
}
