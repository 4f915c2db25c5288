//! Self-checks of the backup operators and the exact oracle on small bundled instances.

use std::cell::RefCell;
use std::fmt::Write as _;

use clap::ValueEnum;
use rand::Rng;
use serde::Serialize;

use tokrl::backups::{
    bad_targets, gae_token_advantages, naive_token_targets, sbad_targets, soft_value, BackupMode,
};
use tokrl::envs::{EnvConfig, TableEnv};
use tokrl::mdp::{
    random_trajectory, Action, ActionFormat, ActionTrie, Enumerable, HashedValues, Observation,
    StepRecord, TokenId, TokenPolicy, TokenValueFn, Trajectory, Vocabulary,
};
use tokrl::oracle::{
    check_consistency, discrepancy_closed_form, discrepancy_probes, discrepancy_sweep,
    enumerate_prefix_model, greedy_disagreements, soft_action_iteration, value_iteration,
    value_iteration_with, DpOptions, PrefixModel, DEFAULT_NODE_BUDGET,
};
use tokrl::policy::{AutoregressivePolicy, Backend, Encoder, TokenCritic};
use tokrl::rng::seeded;
use tokrl::trainer::{action_policy_loss, critic_loss, policy_loss, BatchStep};

use crate::CliError;

const GAMMA_A: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Consistency,
    Discrepancy,
    Gradients,
    Telescoping,
    All,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Consistency => "consistency",
            Suite::Discrepancy => "discrepancy",
            Suite::Gradients => "gradients",
            Suite::Telescoping => "telescoping",
            Suite::All => "all",
        }
    }
}

/// One measured quantity against its tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: &'static str, name: impl Into<String>, observed: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            tolerance,
            observed,
            passed: observed.is_finite() && observed <= tolerance,
            detail: String::new(),
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    fn failed(suite: &'static str, name: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            suite,
            name: name.into(),
            tolerance: 0.0,
            observed: f64::NAN,
            passed: false,
            detail: format!("error: {err}"),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {:<12} {:<58} observed {:.3e} tol {:.1e}{}",
                if c.passed { "ok  " } else { "FAIL" },
                c.suite,
                c.name,
                c.observed,
                c.tolerance,
                if c.detail.is_empty() { String::new() } else { format!("  ({})", c.detail) }
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(
            s,
            "{} checks, {} failed: {}",
            self.checks.len(),
            failed,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

pub fn verify(suite: Suite) -> Report {
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Consistency {
        checks.extend(consistency());
    }
    if all || suite == Suite::Discrepancy {
        checks.extend(discrepancy());
    }
    if all || suite == Suite::Gradients {
        checks.extend(gradients());
    }
    if all || suite == Suite::Telescoping {
        checks.extend(telescoping());
    }
    Report { checks }
}

/// Two observations over `{x, y, z}`: `xyz` earns 1 and moves on, `zx` earns 2 and ends.
pub fn hand_instance() -> TableEnv {
    let vocab = Vocabulary::new(["x", "y", "z"]).expect("static vocabulary");
    TableEnv::new(vocab, ActionFormat::Fixed { len: 3 }, 2)
        .with_action(0, &[0, 1, 2], 1.0, 1, false)
        .expect("static action")
        .with_action(1, &[2, 0], 2.0, 1, true)
        .expect("static action")
}

/// The instances every suite runs on.
pub fn bundled_envs() -> Vec<(String, EnvConfig)> {
    let mut out = vec![("bandit".to_string(), EnvConfig::key_token())];
    for k in [1, 3] {
        for len in [2, 4, 8] {
            out.push((format!("chain K={k} |a|={len}"), EnvConfig::chain(k, len)));
        }
    }
    out.push(("kitchen 3x3".to_string(), EnvConfig::kitchen(3, 3)));
    out
}

fn model_of(env: &dyn Enumerable) -> Result<PrefixModel, CliError> {
    Ok(enumerate_prefix_model(env, DEFAULT_NODE_BUDGET)?)
}

fn bundled_models() -> Vec<(String, Result<PrefixModel, CliError>)> {
    let mut out: Vec<_> = bundled_envs()
        .into_iter()
        .map(|(name, cfg)| {
            let m = cfg
                .build_enumerable()
                .map_err(CliError::from)
                .and_then(|e| model_of(e.as_enumerable()));
            (name, m)
        })
        .collect();
    out.push(("hand".to_string(), model_of(&hand_instance())));
    out
}

// ---------------------------------------------------------------- consistency

const SUITE_C: &str = "consistency";

fn consistency() -> Vec<Check> {
    let mut out = bad_consistency_checks();
    out.extend(sbad_checks());
    out
}

/// BAD and soft-BAD fixed points against their action-level counterparts on every bundled
/// instance.
pub fn bad_consistency_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (name, model) in bundled_models() {
        let model = match model {
            Ok(m) => m,
            Err(e) => {
                out.push(Check::failed(SUITE_C, format!("{name}: build model"), e));
                continue;
            }
        };
        match bad_vs_action(&model) {
            Ok((gap, greedy)) => {
                out.push(Check::new(SUITE_C, format!("{name}: BAD vs action-level Q"), gap, 1e-8));
                out.push(Check::new(
                    SUITE_C,
                    format!("{name}: greedy token path vs action argmax"),
                    greedy as f64,
                    0.0,
                ));
            }
            Err(e) => out.push(Check::failed(SUITE_C, format!("{name}: BAD vs action-level"), e)),
        }
        for beta in [0.0, 0.1] {
            match soft_dp_gap(&model, beta) {
                Ok(gap) => out.push(Check::new(
                    SUITE_C,
                    format!("{name}: soft BAD (beta {beta}) root value vs action-level"),
                    gap,
                    1e-8,
                )),
                Err(e) => out.push(Check::failed(SUITE_C, format!("{name}: soft BAD beta {beta}"), e)),
            }
        }
    }
    out
}

/// sBAD targets iterated to a fixed point, compared with the action-level soft values.
/// Iterating the sample-based targets is slow, so only the small instances run it.
pub fn sbad_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let small: Vec<(&str, Result<PrefixModel, CliError>)> = vec![
        ("bandit", EnvConfig::key_token().build_enumerable().map_err(CliError::from).and_then(|e| model_of(e.as_enumerable()))),
        ("hand", model_of(&hand_instance())),
        ("chain K=1 |a|=2", EnvConfig::chain(1, 2).build_enumerable().map_err(CliError::from).and_then(|e| model_of(e.as_enumerable()))),
    ];
    for (name, model) in small {
        let model = match model {
            Ok(m) => m,
            Err(e) => {
                out.push(Check::failed(SUITE_C, format!("{name}: build model"), e));
                continue;
            }
        };
        for beta in [0.0, 0.1] {
            match iterated_sbad(&model, beta) {
                Ok(it) => {
                    out.push(
                        Check::new(
                            SUITE_C,
                            format!("{name}: iterated sBAD targets (beta {beta}) vs action-level"),
                            it.root_gap,
                            1e-8,
                        )
                        .detail(format!("{} sweeps", it.sweeps)),
                    );
                    if beta == 0.0 {
                        // The bandit has no discounting between tokens, so both sides are
                        // computed from identical arithmetic and must agree exactly.
                        let tol = if name == "bandit" { 0.0 } else { 1e-10 };
                        out.push(Check::new(
                            SUITE_C,
                            format!("{name}: sBAD at beta 0 vs BAD token Q"),
                            it.bad_gap,
                            tol,
                        ));
                    }
                }
                Err(e) => out.push(Check::failed(SUITE_C, format!("{name}: iterated sBAD beta {beta}"), e)),
            }
        }
    }
    out
}

fn bad_vs_action(model: &PrefixModel) -> Result<(f64, usize), CliError> {
    let bad = value_iteration(model, BackupMode::bad(GAMMA_A), 1e-12)?;
    let act = value_iteration(model, BackupMode::action_level(GAMMA_A), 1e-12)?;
    Ok((
        check_consistency(model, &bad, &act)?,
        greedy_disagreements(model, &bad, &act)?.len(),
    ))
}

fn soft_dp_gap(model: &PrefixModel, beta: f64) -> Result<f64, CliError> {
    let tok = value_iteration(model, BackupMode::soft_bad(beta, GAMMA_A), 1e-12)?;
    let act = soft_action_iteration(model, beta, GAMMA_A, &DpOptions::default())?;
    Ok((0..model.observation_count())
        .map(|o| (tok.obs_value(model, o) - act.obs_value(model, o)).abs())
        .fold(0.0, f64::max))
}

/// Token Q stored per `(node, edge)` of a prefix model.
struct ModelQ<'a> {
    model: &'a PrefixModel,
    q: &'a [Vec<f64>],
}

impl ModelQ<'_> {
    fn node(&self, obs: &Observation, context: &[TokenId]) -> Option<usize> {
        let o = self.model.obs_index(obs.id)?;
        self.model.find_node(o, context)
    }

    fn get(&self, obs: &Observation, context: &[TokenId], token: TokenId) -> f64 {
        self.node(obs, context)
            .and_then(|n| {
                let e = self.model.nodes[n].edges.iter().position(|e| e.token == token)?;
                Some(self.q[n][e])
            })
            .unwrap_or(0.0)
    }

    /// `π ∝ π̄ exp(Q / β)` with `π̄` uniform over the node's edges; greedy at `β = 0`.
    fn boltzmann(&self, obs: &Observation, context: &[TokenId], beta: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.model.vocab_size];
        let Some(n) = self.node(obs, context) else {
            return p;
        };
        let edges = &self.model.nodes[n].edges;
        let qs = &self.q[n];
        let m = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if beta == 0.0 {
            let e = qs.iter().position(|&q| q == m).unwrap_or(0);
            p[edges[e].token] = 1.0;
            return p;
        }
        let w: Vec<f64> = qs.iter().map(|&q| ((q - m) / beta).exp()).collect();
        let z: f64 = w.iter().sum();
        for (e, edge) in edges.iter().enumerate() {
            p[edge.token] = w[e] / z;
        }
        p
    }

    fn uniform(&self, obs: &Observation, context: &[TokenId]) -> Vec<f64> {
        let mut p = vec![0.0; self.model.vocab_size];
        if let Some(n) = self.node(obs, context) {
            let edges = &self.model.nodes[n].edges;
            for e in edges {
                p[e.token] = 1.0 / edges.len() as f64;
            }
        }
        p
    }
}

struct Boltzmann<'a> {
    q: &'a ModelQ<'a>,
    beta: f64,
}

impl TokenPolicy for Boltzmann<'_> {
    fn vocab_size(&self) -> usize {
        self.q.model.vocab_size
    }

    fn token_probs(&self, obs: &Observation, prefix: &[TokenId], _mask: Option<&[bool]>) -> Vec<f64> {
        self.q.boltzmann(obs, prefix, self.beta)
    }
}

struct UniformLegal<'a>(&'a ModelQ<'a>);

impl TokenPolicy for UniformLegal<'_> {
    fn vocab_size(&self) -> usize {
        self.0.model.vocab_size
    }

    fn token_probs(&self, obs: &Observation, prefix: &[TokenId], _mask: Option<&[bool]>) -> Vec<f64> {
        self.0.uniform(obs, prefix)
    }
}

struct Iterated {
    sweeps: usize,
    root_gap: f64,
    bad_gap: f64,
}

/// Repeatedly replaces every token Q with its sBAD target, computed from one-step
/// trajectories through each legal action, until nothing moves.
fn iterated_sbad(model: &PrefixModel, beta: f64) -> Result<Iterated, CliError> {
    let obs = |o: usize| Observation::new(model.obs_ids[o], vec![]);
    let mut trajs = Vec::new();
    for (o, row) in model.actions.iter().enumerate() {
        for info in row {
            let n = info.action.len();
            let step = StepRecord {
                obs: obs(o),
                action: info.action.clone(),
                reward: info.reward,
                next_obs: info.next.map_or_else(|| obs(o), obs),
                done: info.next.is_none(),
                token_logprobs: vec![0.0; n],
                token_values: vec![0.0; n + 1],
            };
            let traj = Trajectory::new(vec![step], GAMMA_A)
                .map_err(|e| CliError::Config(e.to_string()))?;
            trajs.push((traj, &info.path));
        }
    }
    let mut q: Vec<Vec<f64>> = model.nodes.iter().map(|n| vec![0.0; n.edges.len()]).collect();
    let max_sweeps = 20_000;
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let mut next = q.clone();
        {
            let mq = ModelQ { model, q: &q };
            let qf = |o: &Observation, c: &[TokenId], w: TokenId| mq.get(o, c, w);
            let pi = Boltzmann { q: &mq, beta };
            let reference = UniformLegal(&mq);
            for (traj, path) in &trajs {
                let t = sbad_targets(traj, &qf, &pi, &reference, beta, GAMMA_A)
                    .map_err(|e| CliError::Config(e.to_string()))?;
                for (j, &(n, e)) in path.iter().enumerate() {
                    next[n][e] = t.value_targets[j];
                }
            }
        }
        let delta = q
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        q = next;
        if delta <= 1e-14 {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(CliError::Config(format!(
                "iterated sBAD did not settle after {max_sweeps} sweeps (last change {delta:e})"
            )));
        }
    }
    let act = soft_action_iteration(model, beta, GAMMA_A, &DpOptions::default())?;
    let mq = ModelQ { model, q: &q };
    let mut root_gap: f64 = 0.0;
    for o in 0..model.observation_count() {
        let ob = obs(o);
        let pi = mq.boltzmann(&ob, &[], beta);
        let qs: Vec<f64> = (0..model.vocab_size)
            .map(|w| if pi[w] > 0.0 { mq.get(&ob, &[], w) } else { 0.0 })
            .collect();
        let v = soft_value(&pi, &qs, &mq.uniform(&ob, &[]), beta)
            .map_err(|e| CliError::Config(e.to_string()))?;
        root_gap = root_gap.max((v - act.obs_value(model, o)).abs());
    }
    let bad = value_iteration(model, BackupMode::bad(GAMMA_A), 1e-12)?;
    let bad_gap = q
        .iter()
        .flatten()
        .zip(bad.q_token.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(Iterated {
        sweeps,
        root_gap,
        bad_gap,
    })
}

// ---------------------------------------------------------------- discrepancy

const SUITE_D: &str = "discrepancy";
pub const HAND_GAP: f64 = 2.4125;
const GAMMA_W_PROBES: [f64; 4] = [0.95, 0.9, 0.8, 0.5];

fn discrepancy() -> Vec<Check> {
    let mut out = discrepancy_probe_checks();
    out.extend(discrepancy_sweep_checks());
    out
}

/// The hand-derived instance plus every eligible probe on the bundled instances.
pub fn discrepancy_probe_checks() -> Vec<Check> {
    let mut out = hand_check();
    for (name, model) in bundled_models() {
        let model = match model {
            Ok(m) => m,
            Err(e) => {
                out.push(Check::failed(SUITE_D, format!("{name}: build model"), e));
                continue;
            }
        };
        for gw in GAMMA_W_PROBES {
            match probe_gaps(&model, gw) {
                Ok((n, exact, pred_gap, closed_gap)) => {
                    out.push(
                        Check::new(
                            SUITE_D,
                            format!("{name}: gamma_w {gw} observed vs predicted gap"),
                            pred_gap,
                            1e-9,
                        )
                        .detail(format!("{n} probes")),
                    );
                    out.push(
                        Check::new(
                            SUITE_D,
                            format!("{name}: gamma_w {gw} observed vs closed form"),
                            closed_gap,
                            1e-9,
                        )
                        .detail(format!("{exact} probes with exact successor")),
                    );
                }
                Err(e) => out.push(Check::failed(SUITE_D, format!("{name}: gamma_w {gw}"), e)),
            }
        }
    }
    out
}

/// Shape of the naive-backup gap over the `(γ_w, |a|)` grid on the chain family.
pub fn discrepancy_sweep_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for k in [1, 3] {
        match sweep_shape(k) {
            Ok(checks) => out.extend(checks),
            Err(e) => out.push(Check::failed(SUITE_D, format!("chain K={k} sweep"), e)),
        }
    }
    out
}

fn hand_check() -> Vec<Check> {
    let run = || -> Result<Vec<Check>, CliError> {
        let model = model_of(&hand_instance())?;
        let closed = discrepancy_closed_form(1.0, GAMMA_A, 0.5, 3, 1, 2.0, 2)?;
        let naive = value_iteration(&model, BackupMode::naive(0.5, GAMMA_A), 1e-13)?;
        let act = value_iteration(&model, BackupMode::action_level(GAMMA_A), 1e-13)?;
        let probes = discrepancy_probes(&model, &naive, &act)?;
        let o0 = model.obs_index(0).ok_or_else(|| CliError::Config("obs 0 missing".into()))?;
        let p = probes
            .iter()
            .find(|p| p.obs == o0 && p.j == 1)
            .ok_or_else(|| CliError::Config("no probe at the first token of xyz".into()))?;
        Ok(vec![
            Check::new(SUITE_D, "hand instance: closed form = 2.4125", (closed - HAND_GAP).abs(), 1e-12),
            Check::new(SUITE_D, "hand instance: oracle gap = 2.4125", (p.observed - HAND_GAP).abs(), 1e-9)
                .detail(format!("observed {}", p.observed)),
        ])
    };
    run().unwrap_or_else(|e| vec![Check::failed(SUITE_D, "hand instance", e)])
}

/// Returns `(probes, exact probes, max |observed − predicted|, max |observed − closed form|)`.
fn probe_gaps(model: &PrefixModel, gamma_w: f64) -> Result<(usize, usize, f64, f64), CliError> {
    let opts = DpOptions {
        tol: 1e-13,
        ..DpOptions::default()
    };
    let naive = value_iteration_with(model, BackupMode::naive(gamma_w, GAMMA_A), &opts)?;
    let act = value_iteration_with(model, BackupMode::action_level(GAMMA_A), &opts)?;
    let probes = discrepancy_probes(model, &naive, &act)?;
    if probes.is_empty() {
        return Err(CliError::Config("no eligible probes".into()));
    }
    let pred = probes.iter().map(|p| (p.observed - p.predicted).abs()).fold(0.0, f64::max);
    let exact: Vec<_> = probes.iter().filter(|p| p.closed_form_exact).collect();
    let closed = exact.iter().map(|p| (p.observed - p.closed_form).abs()).fold(0.0, f64::max);
    Ok((probes.len(), exact.len(), pred, closed))
}

pub const SWEEP_GAMMA_W: [f64; 6] = [0.5, 0.8, 0.9, 0.95, 0.99, 1.0];
pub const SWEEP_LENS: [usize; 3] = [2, 4, 8];

fn sweep_shape(k: usize) -> Result<Vec<Check>, CliError> {
    let opts = DpOptions {
        tol: 1e-13,
        ..DpOptions::default()
    };
    let rows = discrepancy_sweep(
        |len| {
            let env = EnvConfig::chain(k, len)
                .build_enumerable()
                .map_err(|e| tokrl::oracle::OracleError::Domain(e.to_string()))?;
            enumerate_prefix_model(env.as_enumerable(), DEFAULT_NODE_BUDGET)
        },
        &SWEEP_GAMMA_W,
        &SWEEP_LENS,
        GAMMA_A,
        &opts,
    )?;
    let gap = |gw: f64, len: usize| {
        rows.iter()
            .find(|r| r.gamma_w == gw && r.action_len == len)
            .map(|r| r.max_gap)
            .unwrap_or(f64::NAN)
    };
    let at_one = SWEEP_LENS.iter().map(|&l| gap(1.0, l)).fold(0.0, f64::max);
    let mut rise_in_gw: f64 = 0.0;
    for w in SWEEP_GAMMA_W.windows(2) {
        for &l in &SWEEP_LENS {
            rise_in_gw = rise_in_gw.max(gap(w[1], l) - gap(w[0], l));
        }
    }
    let mut drop_in_len: f64 = 0.0;
    for &gw in &SWEEP_GAMMA_W {
        for l in SWEEP_LENS.windows(2) {
            drop_in_len = drop_in_len.max(gap(gw, l[0]) - gap(gw, l[1]));
        }
    }
    let worst = gap(0.5, 8);
    Ok(vec![
        Check::new(SUITE_D, format!("chain K={k}: gap vanishes at gamma_w = 1"), at_one, 1e-9),
        Check::new(SUITE_D, format!("chain K={k}: gap non-increasing in gamma_w"), rise_in_gw, 1e-9),
        Check::new(SUITE_D, format!("chain K={k}: gap non-decreasing in |a|"), drop_in_len, 1e-9)
            .detail(format!("gap at gamma_w 0.5, |a| 8: {worst:.4}")),
    ])
}

// ---------------------------------------------------------------- gradients

const SUITE_G: &str = "gradients";
const N_OBS: usize = 3;
const VOCAB: usize = 4;
const MAX_LEN: usize = 3;

fn g_obs(id: u64) -> Observation {
    Observation::new(id, vec![])
}

fn random_steps(seed: u64, n: usize, masked: bool) -> Vec<BatchStep> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let mut legal: Vec<Action> = Vec::new();
            while legal.len() < 3 {
                let len = rng.random_range(1..=MAX_LEN);
                let a = Action::new((0..len).map(|_| rng.random_range(0..VOCAB)).collect())
                    .expect("non-empty action");
                if !legal.contains(&a) {
                    legal.push(a);
                }
            }
            let action = legal[rng.random_range(0..legal.len())].clone();
            let trie = ActionTrie::new(&legal);
            let masks = masked.then(|| (0..action.len()).map(|j| trie.mask(action.prefix(j), VOCAB)).collect());
            let n = action.len();
            BatchStep {
                obs: g_obs(rng.random_range(0..N_OBS as u64)),
                next_obs: g_obs(rng.random_range(0..N_OBS as u64)),
                reward: rng.random_range(-1.0..1.0),
                done: rng.random_bool(0.3),
                legal,
                masks,
                old_logprobs: vec![0.0; n],
                advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
                old_action_logprob: 0.0,
                action,
            }
        })
        .collect()
}

fn randomize(params: &mut [f64], seed: u64, scale: f64) {
    let mut rng = seeded(seed);
    for p in params {
        *p = rng.random_range(-scale..scale);
    }
}

fn encoder() -> Encoder {
    Encoder::new(N_OBS, VOCAB, MAX_LEN)
}

fn random_policy(backend: Backend, steps: &[BatchStep], seed: u64) -> AutoregressivePolicy {
    let mut pi = AutoregressivePolicy::new(backend, encoder(), seed);
    for s in steps {
        for a in &s.legal {
            for j in 0..a.len() {
                pi.model_mut().ensure(&s.obs, a.prefix(j));
            }
        }
    }
    randomize(pi.model_mut().params_mut(), seed + 1, 0.8);
    pi
}

fn random_critic(backend: Backend, steps: &[BatchStep], seed: u64) -> TokenCritic {
    let mut c = TokenCritic::new(backend, encoder(), seed);
    for s in steps {
        for j in 0..s.action.len() {
            c.ensure(&s.obs, s.action.prefix(j));
        }
        c.ensure(&s.next_obs, &[]);
    }
    randomize(c.params_mut(), seed + 1, 0.7);
    c.sync_target();
    randomize(c.params_mut(), seed + 2, 0.7);
    c
}

/// Old log-probabilities that put each ratio inside one region of the clipped objective,
/// away from the kinks.
fn set_old_logprobs(steps: &mut [BatchStep], pi: &AutoregressivePolicy, seed: u64) {
    let mut rng = seeded(seed);
    let mut ratio = || match rng.random_range(0..3) {
        0 => rng.random_range(0.5..0.75),
        1 => rng.random_range(0.85..1.15),
        _ => rng.random_range(1.25..1.6f64),
    };
    for s in steps {
        for j in 0..s.action.len() {
            let lp = pi.probs(&s.obs, s.action.prefix(j), s.mask(j))[s.action.tokens()[j]].ln();
            s.old_logprobs[j] = lp - ratio().ln();
        }
        let k = s.legal.iter().position(|a| *a == s.action).unwrap_or(0);
        s.old_action_logprob = pi.twosome_action_dist(&s.obs, &s.legal)[k].ln() - ratio().ln();
    }
}

fn probe_indices(grad: &[f64], seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let mut p: Vec<usize> = (0..20).map(|_| rng.random_range(0..grad.len())).collect();
    p.extend((0..grad.len()).filter(|&i| grad[i].abs() > 1e-4).step_by(3).take(20));
    p
}

/// Max relative error of central differences (step 1e-5) on `probes`.
fn fd_error(params: &mut [f64], analytic: &[f64], probes: &[usize], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &i in probes {
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        let num = (up - down) / (2.0 * h);
        let denom = num.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max((num - analytic[i]).abs() / denom);
    }
    worst
}

struct FdTally {
    probes: usize,
    worst: f64,
}

impl FdTally {
    fn add(&mut self, probes: usize, err: f64) {
        self.probes += probes;
        self.worst = self.worst.max(err);
    }

    fn check(&self, name: &str) -> Check {
        let mut c = Check::new(SUITE_G, name, self.worst, 1e-4).detail(format!("{} probes", self.probes));
        if self.probes < 30 {
            c.passed = false;
            c.detail.push_str(", fewer than 30");
        }
        c
    }
}

const BACKENDS: [Backend; 2] = [Backend::Tabular, Backend::SmallNet];

pub fn gradients() -> Vec<Check> {
    vec![
        actor_logprob_fd(),
        critic_fd(),
        policy_fd(),
        action_fd(),
    ]
}

fn actor_logprob_fd() -> Check {
    let mut t = FdTally { probes: 0, worst: 0.0 };
    for backend in BACKENDS {
        for masked in [false, true] {
            let steps = random_steps(60 + masked as u64, 8, masked);
            let pi = random_policy(backend, &steps, 61);
            let total = |p: &AutoregressivePolicy| -> f64 {
                steps
                    .iter()
                    .map(|s| {
                        (0..s.action.len())
                            .map(|j| p.probs(&s.obs, s.action.prefix(j), s.mask(j))[s.action.tokens()[j]].ln())
                            .sum::<f64>()
                    })
                    .sum()
            };
            let mut grad = vec![0.0; pi.model().len()];
            for s in &steps {
                for j in 0..s.action.len() {
                    let fwd = pi.forward(&s.obs, s.action.prefix(j));
                    pi.logprob_grad(&fwd, s.mask(j), s.action.tokens()[j], 1.0, &mut grad);
                }
            }
            let mut params = pi.model().params().to_vec();
            let cell = RefCell::new(pi);
            let f = |p: &[f64]| {
                let mut c = cell.borrow_mut();
                c.model_mut().params_mut().copy_from_slice(p);
                total(&c)
            };
            let probes = probe_indices(&grad, 8);
            t.add(probes.len(), fd_error(&mut params, &grad, &probes, &f));
        }
    }
    t.check("actor log-probability gradient")
}

fn critic_fd() -> Check {
    let mut t = FdTally { probes: 0, worst: 0.0 };
    for backend in BACKENDS {
        for (k, mode) in [BackupMode::bad(0.95), BackupMode::naive(0.7, 0.9), BackupMode::action_level(0.95)]
            .into_iter()
            .enumerate()
        {
            let steps = random_steps(70 + k as u64, 12, false);
            let refs: Vec<&BatchStep> = steps.iter().collect();
            let critic = random_critic(backend, &steps, 80 + k as u64);
            let out = critic_loss(&refs, &critic, &mode);
            let mut params = critic.model().params().to_vec();
            let cell = RefCell::new(critic);
            let f = |p: &[f64]| {
                let mut c = cell.borrow_mut();
                c.params_mut().copy_from_slice(p);
                critic_loss(&refs, &c, &mode).loss
            };
            let probes = probe_indices(&out.grad, 9);
            t.add(probes.len(), fd_error(&mut params, &out.grad, &probes, &f));
        }
    }
    t.check("critic loss gradient")
}

fn policy_fd() -> Check {
    let mut t = FdTally { probes: 0, worst: 0.0 };
    for backend in BACKENDS {
        for masked in [false, true] {
            let mut steps = random_steps(90 + masked as u64, 10, masked);
            let pi = random_policy(backend, &steps, 91);
            set_old_logprobs(&mut steps, &pi, 92);
            let refs: Vec<&BatchStep> = steps.iter().collect();
            let out = policy_loss(&refs, &pi, 0.2, 0.05);
            let mut params = pi.model().params().to_vec();
            let cell = RefCell::new(pi);
            let f = |p: &[f64]| {
                let mut c = cell.borrow_mut();
                c.model_mut().params_mut().copy_from_slice(p);
                policy_loss(&refs, &c, 0.2, 0.05).loss
            };
            let probes = probe_indices(&out.grad, 10);
            t.add(probes.len(), fd_error(&mut params, &out.grad, &probes, &f));
        }
    }
    t.check("token policy loss gradient")
}

fn action_fd() -> Check {
    let mut t = FdTally { probes: 0, worst: 0.0 };
    for backend in BACKENDS {
        let mut steps = random_steps(100, 10, true);
        let pi = random_policy(backend, &steps, 101);
        set_old_logprobs(&mut steps, &pi, 102);
        let refs: Vec<&BatchStep> = steps.iter().collect();
        let out = action_policy_loss(&refs, &pi, 0.2, 0.05);
        let mut params = pi.model().params().to_vec();
        let cell = RefCell::new(pi);
        let f = |p: &[f64]| {
            let mut c = cell.borrow_mut();
            c.model_mut().params_mut().copy_from_slice(p);
            action_policy_loss(&refs, &c, 0.2, 0.05).loss
        };
        let probes = probe_indices(&out.grad, 11);
        t.add(probes.len(), fd_error(&mut params, &out.grad, &probes, &f));
    }
    t.check("action-level policy loss gradient")
}

// ---------------------------------------------------------------- telescoping

const SUITE_T: &str = "telescoping";
pub const TELESCOPING_CASES: u64 = 1000;

pub fn telescoping() -> Vec<Check> {
    let mut sum_gap: f64 = 0.0;
    let mut gae_gap: f64 = 0.0;
    let mut bitwise_diff = 0usize;
    let mut errors = Vec::new();
    for case in 0..TELESCOPING_CASES {
        let gamma_a = [0.9, 0.95, 0.99, 1.0][(case % 4) as usize];
        let traj = random_trajectory(case, 6, 5, 6, gamma_a);
        let v = HashedValues { salt: case ^ 0x5eed };
        let run = || -> Result<(f64, f64, bool), String> {
            let bad = bad_targets(&traj, &v, gamma_a).map_err(|e| e.to_string())?;
            let naive = naive_token_targets(&traj, &v, 1.0, gamma_a).map_err(|e| e.to_string())?;
            let same = bad.value_targets.len() == naive.value_targets.len()
                && bad
                    .value_targets
                    .iter()
                    .chain(&bad.advantages)
                    .zip(naive.value_targets.iter().chain(&naive.advantages))
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            let gae = gae_token_advantages(&traj, &v, &BackupMode::bad(gamma_a), 1.0)
                .map_err(|e| e.to_string())?;
            let steps = traj.steps();
            let boot = |t: usize| {
                let s = &steps[t];
                if s.done {
                    0.0
                } else {
                    v.value(&s.next_obs, &[])
                }
            };
            let mut worst_sum: f64 = 0.0;
            let mut worst_gae: f64 = 0.0;
            for (t, s) in steps.iter().enumerate() {
                let summed: f64 = bad.advantages[bad.step_range(t)].iter().sum();
                let expect = s.reward + gamma_a * boot(t) - v.value(&s.obs, &[]);
                worst_sum = worst_sum.max((summed - expect).abs());
                let mut ret = 0.0;
                let mut disc = 1.0;
                for later in &steps[t..] {
                    ret += disc * later.reward;
                    disc *= gamma_a;
                }
                ret += disc * boot(steps.len() - 1);
                let first = gae.advantages[gae.step_range(t).start];
                worst_gae = worst_gae.max((first - (ret - v.value(&s.obs, &[]))).abs());
            }
            Ok((worst_sum, worst_gae, same))
        };
        match run() {
            Ok((s, g, same)) => {
                sum_gap = sum_gap.max(s);
                gae_gap = gae_gap.max(g);
                bitwise_diff += usize::from(!same);
            }
            Err(e) => errors.push(format!("case {case}: {e}")),
        }
    }
    let n = format!("{TELESCOPING_CASES} random trajectories");
    let mut out = vec![
        Check::new(SUITE_T, "per-action residual sum equals action-level residual", sum_gap, 1e-10)
            .detail(n.clone()),
        Check::new(SUITE_T, "token GAE at lambda 1 equals discounted return minus V", gae_gap, 1e-9)
            .detail(n.clone()),
        Check::new(SUITE_T, "naive backup at gamma_w 1 is bitwise BAD", bitwise_diff as f64, 0.0)
            .detail(n),
    ];
    if !errors.is_empty() {
        out.push(Check::failed(SUITE_T, "target computation", errors.join("; ")));
    }
    out
}
