use super::*;
use crate::backups::BackupMode;
use crate::envs::{KeyTokenBandit, SyntheticChain, TableEnv};
use crate::mdp::{ActionFormat, Vocabulary};

fn bandit_model() -> PrefixModel {
    enumerate_prefix_model(&KeyTokenBandit::new(), DEFAULT_NODE_BUDGET).unwrap()
}

pub(crate) fn hand_instance() -> TableEnv {
    let vocab = Vocabulary::new(["x", "y", "z"]).unwrap();
    TableEnv::new(vocab, ActionFormat::Fixed { len: 3 }, 2)
        .with_action(0, &[0, 1, 2], 1.0, 1, false)
        .unwrap()
        .with_action(1, &[2, 0], 2.0, 1, true)
        .unwrap()
}

#[test]
fn bandit_model_shape() {
    let m = bandit_model();
    assert_eq!(m.observation_count(), 1);
    assert_eq!(m.node_count(), 3);
    assert_eq!(m.edge_count(), 5);
    assert_eq!(m.actions[0].len(), 3);
}

#[test]
fn chain_node_count() {
    let env = SyntheticChain::new(2, 2, 10).unwrap();
    let m = enumerate_prefix_model(&env, DEFAULT_NODE_BUDGET).unwrap();
    assert_eq!(m.node_count(), 2 * (1 + 2));
}

#[test]
fn budget_is_enforced() {
    let env = SyntheticChain::new(50, 4, 10).unwrap();
    assert!(matches!(
        enumerate_prefix_model(&env, 10),
        Err(OracleError::TooLarge { .. })
    ));
}

#[test]
fn bandit_fixed_points() {
    let m = bandit_model();
    let act = value_iteration(&m, BackupMode::action_level(0.95), 1e-12).unwrap();
    assert_eq!(act.q_action[0], vec![1.0, 0.0, 0.0]);
    let bad = value_iteration(&m, BackupMode::bad(0.95), 1e-12).unwrap();
    let kitchen = &m.actions[0][0].path;
    for &(n, e) in kitchen {
        assert_eq!(bad.q_token[n][e], 1.0);
    }
    let naive = value_iteration(&m, BackupMode::naive(0.5, 0.95), 1e-12).unwrap();
    let (n, e) = kitchen[0];
    assert!((naive.q_token[n][e] - 0.25).abs() < 1e-12);
    assert!(check_consistency(&m, &bad, &act).unwrap() <= 1e-9);
    let gap = check_consistency(&m, &naive, &act).unwrap();
    let cf = discrepancy_closed_form(1.0, 0.95, 0.5, 3, 1, 0.0, 1).unwrap();
    assert!((gap - cf).abs() < 1e-9);
    let one = value_iteration(&m, BackupMode::naive(1.0, 0.95), 1e-12).unwrap();
    assert!(check_consistency(&m, &one, &act).unwrap() <= 1e-9);
    assert!(greedy_disagreements(&m, &bad, &act).unwrap().is_empty());
}

#[test]
fn hand_instance_matches_closed_form() {
    let env = hand_instance();
    let m = enumerate_prefix_model(&env, DEFAULT_NODE_BUDGET).unwrap();
    let act = value_iteration(&m, BackupMode::action_level(0.95), 1e-12).unwrap();
    let naive = value_iteration(&m, BackupMode::naive(0.5, 0.95), 1e-12).unwrap();
    assert!((act.q_action[0][0] - 2.9).abs() < 1e-12);
    let (n, e) = m.actions[0][0].path[0];
    assert!((naive.q_token[n][e] - 0.4875).abs() < 1e-12);
    let probes = discrepancy_probes(&m, &naive, &act).unwrap();
    let p = probes.iter().find(|p| p.obs == 0 && p.j == 1).unwrap();
    assert!((p.closed_form - 2.4125).abs() < 1e-12);
    assert!((p.observed - 2.4125).abs() < 1e-9);
    assert!(p.closed_form_exact);
}

#[test]
fn closed_form_examples() {
    assert_eq!(discrepancy_closed_form(3.0, 0.9, 1.0, 4, 2, 7.0, 3).unwrap(), 0.0);
    let d = discrepancy_closed_form(1.0, 0.95, 0.5, 3, 1, 2.0, 2).unwrap();
    assert!((d - 2.4125).abs() < 1e-12);
    assert!((d - (2.9 - 0.4875)).abs() < 1e-12);
    let v = discrepancy_v_form(1.0, 0.95, 0.5, 2, 1, 1.0).unwrap();
    assert!((v - 0.975).abs() < 1e-12);
    assert!(matches!(
        discrepancy_closed_form(1.0, 0.9, 0.5, 3, 3, 0.0, 1),
        Err(OracleError::Domain(_))
    ));
    let fp = naive_v_form_fixed_point(1.0, 0.95, 0.5, 2, 1.0).unwrap();
    assert!((1.95 - fp[0] - 0.975).abs() < 1e-12);
}

#[test]
fn fixed_point_is_unique() {
    let env = SyntheticChain::new(3, 3, 20).unwrap();
    let m = enumerate_prefix_model(&env, DEFAULT_NODE_BUDGET).unwrap();
    for mode in [
        BackupMode::action_level(0.9),
        BackupMode::bad(0.9),
        BackupMode::naive(0.7, 0.9),
    ] {
        let a = value_iteration_with(&m, mode, &DpOptions::default()).unwrap();
        let b = value_iteration_with(
            &m,
            mode,
            &DpOptions {
                init: 1.0,
                ..DpOptions::default()
            },
        )
        .unwrap();
        for (x, y) in a.q_token.iter().flatten().zip(b.q_token.iter().flatten()) {
            assert!((x - y).abs() <= 1e-11);
        }
        assert!(a.residual <= 1e-12);
    }
}

#[test]
fn non_convergence_reports_trace() {
    let m = bandit_model();
    let err = value_iteration_with(
        &SyntheticChain::new(3, 2, 5)
            .map(|e| enumerate_prefix_model(&e, DEFAULT_NODE_BUDGET).unwrap())
            .unwrap(),
        BackupMode::bad(0.99),
        &DpOptions {
            max_iters: 2,
            ..DpOptions::default()
        },
    );
    assert!(matches!(err, Err(OracleError::NonConvergence { iterations: 2, .. })));
    let other = value_iteration(&m, BackupMode::bad(0.9), 1e-12).unwrap();
    let env = SyntheticChain::new(2, 2, 5).unwrap();
    let m2 = enumerate_prefix_model(&env, DEFAULT_NODE_BUDGET).unwrap();
    let act2 = value_iteration(&m2, BackupMode::action_level(0.9), 1e-12).unwrap();
    assert!(matches!(
        check_consistency(&m2, &other, &act2),
        Err(OracleError::ModelMismatch(_))
    ));
}

#[test]
fn soft_root_values_match_action_level() {
    let m = bandit_model();
    for beta in [0.0, 0.1, 1.0] {
        let tok = value_iteration(&m, BackupMode::soft_bad(beta, 0.95), 1e-12).unwrap();
        let act = soft_action_iteration(&m, beta, 0.95, &DpOptions::default()).unwrap();
        assert!((tok.obs_value(&m, 0) - act.obs_value(&m, 0)).abs() < 1e-10);
    }
    let expect = 0.1 * ((1f64 / 0.1).exp() / 3.0 + 2.0 / 3.0).ln();
    let tok = value_iteration(&m, BackupMode::soft_bad(0.1, 0.95), 1e-12).unwrap();
    assert!((tok.obs_value(&m, 0) - expect).abs() < 1e-12);
}

#[test]
fn sweep_is_monotone() {
    let build = |l: usize| {
        enumerate_prefix_model(&SyntheticChain::new(1, l, 10).unwrap(), DEFAULT_NODE_BUDGET)
    };
    let rows = discrepancy_sweep(build, &[0.5, 0.9, 1.0], &[2, 4, 8], 0.95, &DpOptions::default())
        .unwrap();
    assert_eq!(rows.len(), 9);
    for r in rows.iter().filter(|r| r.gamma_w == 1.0) {
        assert_eq!(r.max_gap, 0.0);
    }
    let at = |g: f64, l: usize| {
        rows.iter()
            .find(|r| r.gamma_w == g && r.action_len == l)
            .unwrap()
            .max_gap
    };
    assert!(at(0.9, 2) < at(0.9, 4) && at(0.9, 4) < at(0.9, 8));
    assert!(at(0.5, 4) > at(0.9, 4));
}
