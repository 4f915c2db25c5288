use std::fs;
use std::path::Path;
use std::process::Command;

use tokrl::trainer::MetricsRow;
use tokrl_cli::config::ExperimentConfig;
use tokrl_cli::plotdata::{plotdata, PLOT_HEADER};
use tokrl_cli::run::{load_config, merge_metrics, read_merged, run_experiment, write_merged, Manifest};
use tokrl_cli::sweep::{parse_axis, sweep};
use tokrl_cli::CliError;

const BANDIT: &str = r#"
[env]
kind = "key_token"
[algo]
name = "poad"
[train]
actor_lr = 0.03
total_env_steps = 512
seed = [1, 2, 3]
[output]
name = "small"
"#;

fn mean_returns(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn three_seeds_give_three_curves_and_their_mean() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::resolve(BANDIT, &[]).unwrap();
    let summary = run_experiment(&cfg, root.path()).unwrap();
    let dir = root.path().join("small");
    assert_eq!(summary.dir, dir);
    let curves: Vec<Vec<f64>> = [1, 2, 3]
        .iter()
        .map(|s| mean_returns(&dir.join(format!("seed_{s}/metrics.csv"))))
        .collect();
    assert!(curves.iter().all(|c| c.len() == 4));
    let merged = read_merged(&dir.join("merged.csv")).unwrap();
    assert_eq!(merged.len(), 4);
    for (i, row) in merged.iter().enumerate() {
        let xs: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        let mean = xs.iter().sum::<f64>() / 3.0;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert_eq!(row.n_seeds, 3);
        assert!((row.mean - mean).abs() <= 1e-12, "{} vs {mean}", row.mean);
        assert!((row.std - std).abs() <= 1e-12);
    }
    let m = Manifest::read(&dir.join("manifest.json")).unwrap();
    assert_eq!(m.seeds, vec![1, 2, 3]);
    assert_eq!(m.status, "ok");
    assert_eq!(m.config_hash, cfg.hash());
    assert!(!dir.join("FAILED").exists());
}

#[test]
fn manifest_alone_reproduces_a_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = ExperimentConfig::resolve(BANDIT, &["train.seed=4".into()]).unwrap();
    run_experiment(&cfg, a.path()).unwrap();
    let manifest = a.path().join("small/manifest.json");
    let again = load_config(&manifest, &[]).unwrap();
    assert_eq!(again.hash(), cfg.hash());
    run_experiment(&again, b.path()).unwrap();
    let rel = "small/seed_4/metrics.csv";
    assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());

    let mut m = Manifest::read(&manifest).unwrap();
    m.config = m.config.replace("actor_lr = 0.03", "actor_lr = 0.04");
    let tampered = a.path().join("tampered.json");
    fs::write(&tampered, serde_json::to_string(&m).unwrap()).unwrap();
    assert!(matches!(load_config(&tampered, &[]), Err(CliError::HashMismatch { .. })));
}

#[test]
fn empty_grid_is_one_baseline_run() {
    let root = tempfile::tempdir().unwrap();
    let res = sweep(BANDIT, &["train.seed=1".into()], &[], root.path(), 64).unwrap();
    assert_eq!(res.runs.len(), 1);
    assert!(res.dir.join("baseline/seed_1/metrics.csv").exists());
    let table = fs::read_to_string(&res.table).unwrap();
    assert_eq!(table.lines().next(), Some("env_steps,mean_return"));
    assert_eq!(table.lines().count(), 5);
}

#[test]
fn grid_sweep_writes_long_format() {
    let root = tempfile::tempdir().unwrap();
    let grid = [parse_axis("train.gamma_a=1.0,0.95").unwrap()];
    let res = sweep(BANDIT, &["train.seed=1".into()], &grid, root.path(), 64).unwrap();
    assert_eq!(res.runs.len(), 2);
    let table = fs::read_to_string(&res.table).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("train.gamma_a,env_steps,mean_return"));
    assert_eq!(lines.filter(|l| l.starts_with("0.95,")).count(), 4);
}

#[test]
fn oversized_sweep_is_refused_with_its_size() {
    let root = tempfile::tempdir().unwrap();
    let grid = [
        parse_axis("train.actor_lr=0.01,0.02,0.03").unwrap(),
        parse_axis("algo.name=poad,ntpo").unwrap(),
    ];
    match sweep(BANDIT, &[], &grid, root.path(), 10) {
        Err(CliError::OverBudget { runs, budget }) => assert_eq!((runs, budget), (18, 10)),
        other => panic!("expected OverBudget, got {:?}", other.map(|r| r.runs.len())),
    }
    assert!(fs::read_dir(root.path()).unwrap().next().is_none());
    assert!(matches!(parse_axis("train.nope=1"), Err(CliError::UnknownKey { .. })));
}

fn metrics(update: usize, mean_return: f64) -> MetricsRow {
    MetricsRow {
        env_steps: 100 * update,
        update,
        mean_return,
        std_return: 0.0,
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        approx_kl: 0.0,
        clip_frac: 0.0,
        seed: 0,
    }
}

#[test]
fn plotdata_of_a_three_seed_series() {
    let seeds = [[0.0, 1.0, 2.0], [0.3, 0.6, 0.9], [0.5, 0.5, 0.5]];
    let per_seed: Vec<Vec<MetricsRow>> = seeds
        .iter()
        .map(|s| s.iter().enumerate().map(|(i, &r)| metrics(i + 1, r)).collect())
        .collect();
    let refs: Vec<&[MetricsRow]> = per_seed.iter().map(|v| v.as_slice()).collect();
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("algo_a");
    fs::create_dir_all(&dir).unwrap();
    write_merged(&dir.join("merged.csv"), &merge_metrics(&refs)).unwrap();

    // per update: means 0.2667, 0.7, 1.1333; population stds by hand
    let mean = [0.8 / 3.0, 2.1 / 3.0, 3.4 / 3.0];
    let sd = |xs: [f64; 3], m: f64| (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 3.0).sqrt();
    let stds = [
        sd([0.0, 0.3, 0.5], mean[0]),
        sd([1.0, 0.6, 0.5], mean[1]),
        sd([2.0, 0.9, 0.5], mean[2]),
    ];
    let csv = plotdata(&[dir], 2).unwrap();
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(csv.lines().next(), Some(PLOT_HEADER));
    assert_eq!(rows.len(), 3);
    for (i, r) in rows.iter().enumerate() {
        let lo = i.saturating_sub(1);
        let k = (i - lo + 1) as f64;
        let m: f64 = mean[lo..=i].iter().sum::<f64>() / k;
        let s: f64 = stds[lo..=i].iter().sum::<f64>() / k;
        let got: Vec<f64> = r[2..].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(r[0], "algo_a");
        assert_eq!(r[1], (100 * (i + 1)).to_string());
        assert!((got[0] - m).abs() < 1e-12 && (got[1] - (m - s)).abs() < 1e-12 && (got[2] - (m + s)).abs() < 1e-12);
    }
    assert!(matches!(plotdata(&[root.path().join("algo_a")], 4), Err(CliError::Plot(_))));
}

fn tokrl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tokrl"))
}

#[test]
fn binary_reports_unknown_keys_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, BANDIT).unwrap();
    let out = tokrl().arg("run").arg(&cfg).arg("--train.actor_rate=0.1").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.actor_rate") && err.contains("train.actor_lr"), "{err}");
}

#[test]
fn binary_runs_under_tokrl_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, BANDIT).unwrap();
    let out_root = dir.path().join("elsewhere");
    let out = tokrl()
        .env("TOKRL_OUT", &out_root)
        .arg("run")
        .arg(&cfg)
        .arg("--train.seed=2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_root.join("small/seed_2/metrics.csv").exists());
    assert!(out_root.join("small/manifest.json").exists());
}

#[test]
fn binary_verify_and_dp() {
    let out = tokrl().args(["verify", "telescoping"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 failed: PASS"));

    let out = tokrl().args(["dp", "--mode", "naive", "--gamma-w", "0.5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["consistency_gap"].as_f64().unwrap() > 0.0);
    assert_eq!(report["observations"], 1);

    let out = tokrl().args(["dp", "--mode", "bad", "env.kind=chain"]).output().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["consistency_gap"].as_f64().unwrap() <= 1e-8);
}
