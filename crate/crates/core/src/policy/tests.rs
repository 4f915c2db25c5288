use rand::Rng;

use super::*;
use crate::mdp::{length_normalized_softmax, Action, ActionTrie, Observation, TokenId};
use crate::rng::seeded;

fn obs(id: u64) -> Observation {
    Observation::new(id, vec![])
}

fn randomize(model: &mut Model, seed: u64, scale: f64) {
    let mut rng = seeded(seed);
    for p in model.params_mut().iter_mut() {
        *p = rng.random_range(-scale..scale);
    }
}

fn random_tabular(seed: u64, n_obs: usize, vocab: usize, max_len: usize) -> AutoregressivePolicy {
    let mut pi = AutoregressivePolicy::new(Backend::Tabular, Encoder::new(n_obs, vocab, max_len), 0);
    let mut rng = seeded(seed);
    for o in 0..n_obs as u64 {
        let mut stack: Vec<Vec<TokenId>> = vec![vec![]];
        while let Some(p) = stack.pop() {
            pi.model_mut().ensure(&obs(o), &p);
            if p.len() + 1 < max_len {
                for t in 0..vocab {
                    let mut q = p.clone();
                    q.push(t);
                    stack.push(q);
                }
            }
        }
    }
    for x in pi.model_mut().params_mut().iter_mut() {
        *x = rng.random_range(-2.0..2.0);
    }
    pi
}

#[test]
fn fresh_policies_are_uniform() {
    let enc = Encoder::new(3, 4, 3);
    for backend in [Backend::Tabular, Backend::SmallNet] {
        let pi = AutoregressivePolicy::new(backend, enc.clone(), 5);
        let p = pi.probs(&obs(1), &[2], None);
        for x in &p {
            assert!((x - 0.25).abs() < 1e-15);
        }
        let mask = [true, false, true, true];
        let p = pi.probs(&obs(1), &[2], Some(&mask));
        assert_eq!(p[1], 0.0);
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pi.logits(&obs(0), &[], Some(&mask))[1], f64::NEG_INFINITY);
    }
}

#[test]
fn action_logprob_examples() {
    let pi = AutoregressivePolicy::new(Backend::Tabular, Encoder::new(1, 4, 2), 0);
    let a = Action::new(vec![1, 3]).unwrap();
    assert!((pi.action_logprob(&obs(0), &a, None).unwrap() - (1.0f64 / 16.0).ln()).abs() < 1e-12);
    let trie = ActionTrie::new(std::slice::from_ref(&a));
    assert_eq!(pi.action_logprob(&obs(0), &a, Some(&trie)).unwrap(), 0.0);
    let other = ActionTrie::new(&[Action::new(vec![1, 2]).unwrap()]);
    assert!(matches!(
        pi.action_logprob(&obs(0), &a, Some(&other)),
        Err(PolicyError::IllegalAction { position: 1, token: 3 })
    ));
}

#[test]
fn chain_rule_matches_enumeration() {
    let (v, l) = (3, 3);
    let pi = random_tabular(11, 2, v, l);
    let mut total = 0.0;
    for code in 0..v.pow(l as u32) {
        let toks: Vec<TokenId> = (0..l).map(|k| (code / v.pow(k as u32)) % v).collect();
        let mut joint = 1.0;
        for j in 0..l {
            joint *= pi.probs(&obs(1), &toks[..j], None)[toks[j]];
        }
        total += joint;
        let lp = pi
            .action_logprob(&obs(1), &Action::new(toks).unwrap(), None)
            .unwrap();
        assert!((lp.exp() - joint).abs() < 1e-12);
    }
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn normalised_dist_examples() {
    let p = length_normalized_softmax(&[-2.0, -4.0], &[2, 4]);
    assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    assert_eq!(length_normalized_softmax(&[-3.0], &[5]), vec![1.0]);
    let p = length_normalized_softmax(&[-1.0; 3], &[2; 3]);
    assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));

    let pi = random_tabular(2, 1, 3, 2);
    let legal = [Action::new(vec![0, 1]).unwrap(), Action::new(vec![2]).unwrap()];
    let d = pi.twosome_action_dist(&obs(0), &legal);
    assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn per_prefix_normalisation() {
    let mut pi = AutoregressivePolicy::new(Backend::SmallNet, Encoder::new(4, 5, 3), 3);
    randomize(pi.model_mut(), 4, 1.0);
    let tab = random_tabular(5, 4, 5, 3);
    for o in 0..4 {
        for prefix in [vec![], vec![1], vec![4, 0]] {
            for p in [&pi, &tab] {
                let s: f64 = p.probs(&obs(o), &prefix, None).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}

fn fd_check(params: &mut [f64], f: impl Fn(&[f64]) -> f64, analytic: &[f64], probes: &[usize]) {
    let h = 1e-5;
    for &i in probes {
        let orig = params[i];
        params[i] = orig + h;
        let up = f(params);
        params[i] = orig - h;
        let down = f(params);
        params[i] = orig;
        let num = (up - down) / (2.0 * h);
        let denom = num.abs().max(analytic[i].abs()).max(1e-6);
        assert!(
            (num - analytic[i]).abs() / denom <= 1e-4,
            "param {i}: numeric {num} vs analytic {}",
            analytic[i]
        );
    }
}

#[test]
fn logprob_gradients_match_finite_differences() {
    for backend in [Backend::Tabular, Backend::SmallNet] {
        let mut pi = AutoregressivePolicy::new(backend, Encoder::new(3, 4, 3), 8);
        let o = obs(2);
        let prefix = [1, 3];
        pi.model_mut().ensure(&o, &prefix);
        randomize(pi.model_mut(), 9, 0.8);
        let mask = [true, true, false, true];
        let fwd = pi.forward(&o, &prefix);
        let mut grad = vec![0.0; pi.model().len()];
        pi.logprob_grad(&fwd, Some(&mask), 3, 1.0, &mut grad);
        let model = pi.model().clone();
        let f = |p: &[f64]| {
            let out = model.forward_with(p, &o, &prefix).out;
            masked_softmax(&out, Some(&mask))[3].ln()
        };
        let mut params = pi.model().params().to_vec();
        let mut rng = seeded(1);
        let probes: Vec<usize> = (0..30).map(|_| rng.random_range(0..params.len())).collect();
        let nz: Vec<usize> = (0..params.len()).filter(|&i| grad[i] != 0.0).take(30).collect();
        fd_check(&mut params, f, &grad, &probes);
        fd_check(&mut params, f, &grad, &nz);
    }
}

#[test]
fn smallnet_value_loss_gradient() {
    let mut critic = TokenCritic::new(Backend::SmallNet, Encoder::new(3, 4, 3), 2);
    {
        let p = critic.params_mut();
        let mut rng = seeded(3);
        for x in p.iter_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
    }
    let mut rng = seeded(4);
    for _ in 0..10 {
        let o = obs(rng.random_range(0..3));
        let len = rng.random_range(0..=3);
        let ctx: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..4)).collect();
        let target = rng.random_range(-1.0..1.0);
        let fwd = critic.forward(&o, &ctx);
        let mut grad = vec![0.0; critic.model().len()];
        critic.backward(&fwd, 2.0 * (fwd.out[0] - target), &mut grad);
        let model = critic.model().clone();
        let f = |p: &[f64]| (model.forward_with(p, &o, &ctx).out[0] - target).powi(2);
        let mut params = critic.model().params().to_vec();
        let nz: Vec<usize> = (0..params.len()).filter(|&i| grad[i] != 0.0).step_by(7).collect();
        fd_check(&mut params, f, &grad, &nz);
    }
}

#[test]
fn critic_target_sync() {
    let mut c = TokenCritic::new(Backend::SmallNet, Encoder::new(5, 3, 2), 1);
    let mut rng = seeded(2);
    let probe = |rng: &mut rand_chacha::ChaCha8Rng| {
        let o = obs(rng.random_range(0..5));
        let n = rng.random_range(0..=2);
        (o, (0..n).map(|_| rng.random_range(0..3)).collect::<Vec<_>>())
    };
    let (o, ctx) = probe(&mut rng);
    assert_eq!(c.value(&o, &ctx, false), 0.0);
    let init = c.target_params().to_vec();
    for x in c.params_mut().iter_mut() {
        *x += 0.1;
    }
    assert_eq!(c.target_params(), &init[..]);
    c.sync_target();
    c.sync_target();
    for _ in 0..100 {
        let (o, ctx) = probe(&mut rng);
        assert_eq!(c.value(&o, &ctx, true), c.value(&o, &ctx, false));
    }
}

#[test]
fn adam_clips_and_rejects_nan() {
    let mut params = vec![0.0; 4];
    let mut grad = vec![10.0, 10.0, 10.0, 10.0];
    let mut opt = Adam::new(AdamConfig::new(0.01, Some(0.5)));
    let s = opt.step(&mut params, &mut grad).unwrap();
    assert!((s.grad_norm - 20.0).abs() < 1e-12);
    assert!(s.clipped_norm <= 0.5);
    let n: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(n <= 0.5);
    let mut bad = vec![0.0, f64::NAN, 0.0, 0.0];
    let before = params.clone();
    assert!(matches!(
        opt.step(&mut params, &mut bad),
        Err(PolicyError::Numerical { index: 1 })
    ));
    assert_eq!(params, before);
}

#[test]
fn checkpoints_round_trip() {
    for backend in [Backend::Tabular, Backend::SmallNet] {
        let mut m = Model::new(backend, Encoder::new(3, 4, 2), 4, 1);
        m.ensure(&obs(1), &[2]);
        m.ensure(&obs(0), &[]);
        randomize(&mut m, 3, 1.0);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &m, "0123456789abcdef").unwrap();
        let (m2, h) = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(h, "0123456789abcdef");
        assert_eq!(m2.params(), m.params());
        assert_eq!(m2.backend(), backend);
        assert_eq!(m2.forward(&obs(1), &[2]).out, m.forward(&obs(1), &[2]).out);
        buf[0] = b'X';
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
