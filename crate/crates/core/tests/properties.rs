use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::BufReader;

use proptest::prelude::*;

use tokrl::backups::soft_value;
use tokrl::envs::{EnvConfig, KeyTokenBandit, SyntheticChain};
use tokrl::mdp::{
    action_token_logprobs, collect_rollout, collect_rollout_with, length_normalized_softmax,
    random_trajectory, read_trajectory_jsonl, write_trajectory_jsonl, Action, ActionTrie,
    DumpHeader, Enumerable, Environment, Observation, RolloutOptions, TokenId, TokenPolicy,
};
use tokrl::oracle::{
    discrepancy_v_form, enumerate_prefix_model, naive_v_form_fixed_point, DEFAULT_NODE_BUDGET,
};
use tokrl::policy::{masked_softmax, AutoregressivePolicy, Backend, Encoder};
use tokrl::trainer::advantage_normalize;

/// Reachable observations and distinct proper prefixes, by plain BFS over `transition`.
fn bfs_counts(env: &dyn Enumerable) -> (usize, usize) {
    let mut seen: HashMap<u64, Observation> = HashMap::new();
    let mut queue: VecDeque<Observation> = env.start_observations().into();
    for o in &queue {
        seen.insert(o.id, o.clone());
    }
    let mut prefixes = 0;
    while let Some(o) = queue.pop_front() {
        let legal = env.legal_actions(&o);
        let mut ps: BTreeSet<Vec<TokenId>> = BTreeSet::new();
        for a in &legal {
            for j in 0..a.len() {
                ps.insert(a.prefix(j).to_vec());
            }
            let out = env.transition(&o, a);
            if !out.done && !seen.contains_key(&out.obs.id) {
                seen.insert(out.obs.id, out.obs.clone());
                queue.push_back(out.obs);
            }
        }
        prefixes += ps.len();
    }
    (seen.len(), prefixes)
}

#[test]
fn prefix_model_matches_independent_enumeration() {
    for cfg in [EnvConfig::key_token(), EnvConfig::chain(3, 4), EnvConfig::chain(1, 8), EnvConfig::kitchen(3, 3)] {
        let env = cfg.build_enumerable().unwrap();
        let model = enumerate_prefix_model(env.as_enumerable(), DEFAULT_NODE_BUDGET).unwrap();
        let (obs, nodes) = bfs_counts(env.as_enumerable());
        assert_eq!(model.observation_count(), obs, "{:?}", cfg.kind);
        assert_eq!(model.node_count(), nodes, "{:?}", cfg.kind);
    }
}

#[test]
fn prefix_model_replays_against_the_live_environment() {
    for cfg in [EnvConfig::chain(3, 2), EnvConfig::kitchen(3, 3)] {
        let e = cfg.build_enumerable().unwrap();
        let model = enumerate_prefix_model(e.as_enumerable(), DEFAULT_NODE_BUDGET).unwrap();
        let mut live = cfg.build().unwrap();
        model.check_against_env(live.as_mut(), 200, e.horizon(), 17).unwrap();
    }
}

/// Fixed logits over the vocabulary, independent of context.
struct FixedLogits(Vec<f64>);

impl TokenPolicy for FixedLogits {
    fn vocab_size(&self) -> usize {
        self.0.len()
    }

    fn token_probs(&self, _obs: &Observation, _prefix: &[TokenId], mask: Option<&[bool]>) -> Vec<f64> {
        masked_softmax(&self.0, mask)
    }
}

#[test]
fn sampled_action_frequencies_match_policy_probabilities() {
    let mut env = KeyTokenBandit::new();
    let policy = FixedLogits((0..env.vocab().len()).map(|i| 0.3 * i as f64 - 0.5).collect());
    let obs = KeyTokenBandit::observation();
    let legal = env.legal_actions(&obs);
    let trie = ActionTrie::new(&legal);
    let n = 20_000;
    let mut counts = vec![0usize; legal.len()];
    for seed in 0..n {
        let t = collect_rollout(&mut env, &policy, 1, seed).unwrap();
        let a = &t.steps()[0].action;
        counts[legal.iter().position(|l| l == a).expect("legal action")] += 1;
    }
    for (a, &c) in legal.iter().zip(&counts) {
        let p: f64 = action_token_logprobs(&policy, &obs, a, Some(&trie)).iter().sum::<f64>().exp();
        let freq = c as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() <= 5.0 * sigma + 1e-12, "{a:?}: {freq} vs {p}");
    }
}

fn random_policy(env: &dyn Environment, seed: u64) -> AutoregressivePolicy {
    let enc = Encoder::new(env.observation_count(), env.vocab().len(), env.max_action_len());
    AutoregressivePolicy::new(Backend::SmallNet, enc, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn masked_rollouts_emit_only_legal_actions(seed in any::<u64>(), kitchen in any::<bool>()) {
        let cfg = if kitchen { EnvConfig::kitchen(3, 3) } else { EnvConfig::chain(3, 4) };
        let mut env = cfg.build().unwrap();
        let pi = random_policy(env.as_ref(), seed);
        let t = collect_rollout_with(env.as_mut(), &pi, None, &RolloutOptions::default(), 30, seed).unwrap();
        for s in t.steps() {
            prop_assert!(env.legal_actions(&s.obs).contains(&s.action));
            prop_assert!(s.token_logprobs.iter().all(|lp| lp.is_finite() && *lp <= 0.0));
        }
    }

    #[test]
    fn rollouts_are_deterministic_in_the_seed(seed in any::<u64>()) {
        let cfg = EnvConfig::kitchen(3, 3);
        let (mut a, mut b) = (cfg.build().unwrap(), cfg.build().unwrap());
        let pi = random_policy(a.as_ref(), 3);
        let ta = collect_rollout(a.as_mut(), &pi, 25, seed).unwrap();
        let tb = collect_rollout(b.as_mut(), &pi, 25, seed).unwrap();
        prop_assert_eq!(ta, tb);
    }

    #[test]
    fn trajectory_dump_round_trips(seed in any::<u64>()) {
        let t = random_trajectory(seed, 6, 4, 5, 0.9);
        let header = DumpHeader { vocab_hash: "h".into(), seed, gamma_a: 0.9 };
        let mut buf = Vec::new();
        write_trajectory_jsonl(&mut buf, &header, &t).unwrap();
        let (h, back) = read_trajectory_jsonl(BufReader::new(buf.as_slice())).unwrap();
        prop_assert_eq!(h, header);
        prop_assert_eq!(back, t);
    }

    #[test]
    fn normalized_advantages_have_zero_mean_unit_std(xs in prop::collection::vec(-50.0f64..50.0, 2..64)) {
        let spread = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - xs.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut ys = xs.clone();
        advantage_normalize(&mut ys);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((std - 1.0).abs() < 1e-6);
    }

    #[test]
    fn length_normalised_softmax_ignores_per_token_shifts(
        lps in prop::collection::vec(-20.0f64..0.0, 1..8),
        lens in prop::collection::vec(1usize..6, 8),
        c in -3.0f64..3.0,
    ) {
        let lens = &lens[..lps.len()];
        let p = length_normalized_softmax(&lps, lens);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = lps.iter().zip(lens).map(|(lp, &l)| lp + c * l as f64).collect();
        let q = length_normalized_softmax(&shifted, lens);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn boltzmann_soft_value_is_log_sum_exp(
        q in prop::collection::vec(-5.0f64..5.0, 2..10),
        w in prop::collection::vec(0.1f64..1.0, 10),
        beta in 0.05f64..2.0,
    ) {
        let z: f64 = w[..q.len()].iter().sum();
        let reference: Vec<f64> = w[..q.len()].iter().map(|x| x / z).collect();
        let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = q.iter().zip(&reference).map(|(qi, r)| r * ((qi - m) / beta).exp()).collect();
        let s: f64 = e.iter().sum();
        let pi: Vec<f64> = e.iter().map(|x| x / s).collect();
        let lse = m + beta * s.ln();
        prop_assert!((soft_value(&pi, &q, &reference, beta).unwrap() - lse).abs() < 1e-9);
    }

    #[test]
    fn naive_fixed_point_matches_v_form(
        r in -2.0f64..2.0,
        next in -2.0f64..2.0,
        gamma_w in 0.0f64..=1.0,
        gamma_a in 0.5f64..=1.0,
        len in 2usize..9,
    ) {
        let fp = naive_v_form_fixed_point(r, gamma_a, gamma_w, len, next).unwrap();
        for j in 1..len {
            let gap = discrepancy_v_form(r, gamma_a, gamma_w, len, j, next).unwrap();
            prop_assert!(((r + gamma_a * next) - fp[j - 1] - gap).abs() < 1e-12);
        }
    }
}

#[test]
fn chain_actions_share_one_length() {
    let env = SyntheticChain::new(3, 4, 20).unwrap();
    for o in env.start_observations() {
        let legal: Vec<Action> = env.legal_actions(&o);
        assert!(legal.iter().all(|a| a.len() == 4));
    }
}
