//! One PASS/FAIL line per acceptance criterion. Runs without the libtest harness so the
//! lines always reach the terminal; exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use tokrl::oracle::optimal_return_for;
use tokrl::trainer::RunArtifacts;
use tokrl_cli::config::ExperimentConfig;
use tokrl_cli::run::run_experiment;
use tokrl_cli::verify::{
    bad_consistency_checks, discrepancy_probe_checks, discrepancy_sweep_checks, gradients,
    sbad_checks, telescoping, verify, Check, Suite,
};

struct Outcome {
    passed: bool,
    summary: String,
}

fn outcome(passed: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        summary: summary.into(),
    }
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load(name: &str, overrides: &[&str]) -> ExperimentConfig {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::load(&config(name), &ov).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn train(cfg: &ExperimentConfig) -> Vec<(u64, RunArtifacts)> {
    let root = tempfile::tempdir().expect("temp dir");
    run_experiment(cfg, root.path())
        .unwrap_or_else(|e| panic!("{}: {e}", cfg.name()))
        .seeds
}

/// Passes when every selected check passes and the block finished within `limit`.
fn checks_outcome(checks: &[Check], elapsed: Duration, limit: Option<Duration>) -> Outcome {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    let worst = checks.iter().map(|c| c.observed).fold(0.0, f64::max);
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let mut summary = format!(
        "{} checks, worst observed {worst:.2e}, {:.2?}",
        checks.len(),
        elapsed
    );
    if let Some(l) = limit {
        summary.push_str(&format!(" (limit {l:?})"));
    }
    for c in failed.iter().take(3) {
        summary.push_str(&format!("; failed: {} = {:e} {}", c.name, c.observed, c.detail));
    }
    outcome(!checks.is_empty() && failed.is_empty() && in_time, summary)
}

fn timed(f: impl FnOnce() -> Vec<Check>) -> (Vec<Check>, Duration) {
    let t = Instant::now();
    let c = f();
    (c, t.elapsed())
}

fn c01() -> Outcome {
    let (checks, dt) = timed(bad_consistency_checks);
    let sel: Vec<Check> = checks
        .into_iter()
        .filter(|c| c.name.contains("BAD vs action-level") && !c.name.starts_with("hand"))
        .collect();
    let envs = sel.len();
    let mut o = checks_outcome(&sel, dt, Some(Duration::from_secs(10)));
    o.passed &= envs == 8;
    o
}

fn c02() -> Outcome {
    let (checks, dt) = timed(discrepancy_probe_checks);
    let hand = checks.iter().any(|c| c.name.contains("2.4125") && c.passed);
    let mut o = checks_outcome(&checks, dt, Some(Duration::from_secs(10)));
    o.passed &= hand;
    o
}

fn c03() -> Outcome {
    let (checks, dt) = timed(discrepancy_sweep_checks);
    checks_outcome(&checks, dt, Some(Duration::from_secs(30)))
}

fn c04() -> Outcome {
    let (checks, dt) = timed(telescoping);
    let sel: Vec<Check> = checks.into_iter().filter(|c| c.name.contains("bitwise")).collect();
    checks_outcome(&sel, dt, None)
}

fn c05() -> Outcome {
    let (checks, dt) = timed(gradients);
    checks_outcome(&checks, dt, None)
}

fn c06() -> Outcome {
    let bandit = train(&load("poad_keytoken.cfg", &[]));
    let mut ok = true;
    let mut parts = Vec::new();
    for (seed, a) in &bandit {
        let last = a.metrics.last().map_or(f64::NAN, |m| m.mean_return);
        ok &= last >= 0.95;
        parts.push(format!("bandit seed {seed} {last:.3}"));
    }
    let cfg = load("poad_kitchen.cfg", &[]);
    let env = cfg.env.build_enumerable().expect("kitchen");
    let optimum = optimal_return_for(env.as_enumerable(), env.horizon(), cfg.train.gamma_a)
        .expect("kitchen optimum");
    for (seed, a) in &train(&cfg) {
        let disc = a.last_episodes_mean(100, |e| e.discounted_return).unwrap_or(f64::NAN);
        let ratio = disc / optimum;
        ok &= ratio >= 0.9;
        parts.push(format!("kitchen seed {seed} {ratio:.3} of optimum"));
    }
    outcome(ok, parts.join(", "))
}

fn c07() -> Outcome {
    let gws = ["0.95", "0.9", "0.8", "0.5"];
    let poad = train(&load("poad_keytoken.cfg", &[]));
    let ntpo: Vec<Vec<(u64, RunArtifacts)>> = gws
        .iter()
        .map(|gw| train(&load("ntpo_keytoken.cfg", &[&format!("algo.gamma_w={gw}")])))
        .collect();
    let fin = |a: &RunArtifacts| a.tail_mean_return(0.1).unwrap_or(f64::NAN);
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, (seed, p)) in poad.iter().enumerate() {
        let row: Vec<f64> = ntpo.iter().map(|runs| fin(&runs[i].1)).collect();
        let ordered = row.windows(2).all(|w| w[0] >= w[1]);
        let poad_top = row.iter().all(|&x| fin(p) >= x);
        ok &= ordered && poad_top;
        parts.push(format!(
            "seed {seed}: POAD {:.4} NTPO {}{}",
            fin(p),
            row.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" "),
            if ordered && poad_top { "" } else { " (order broken)" }
        ));
    }
    outcome(ok, parts.join("; "))
}

fn c08() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for algo in ["poad", "action_ppo"] {
        let runs: Vec<Vec<(u64, RunArtifacts)>> = ["0.95", "1.0"]
            .iter()
            .map(|ga| {
                train(&load(
                    "kitchen_penalty.cfg",
                    &[&format!("algo.name={algo}"), &format!("train.gamma_a={ga}")],
                ))
            })
            .collect();
        for ((seed, lo), (_, hi)) in runs[0].iter().zip(&runs[1]) {
            let f = |a: &RunArtifacts| a.metrics.last().map_or(f64::NAN, |m| m.mean_return);
            let good = f(lo) >= f(hi);
            ok &= good;
            parts.push(format!(
                "{algo} seed {seed}: {:.4} vs {:.4}{}",
                f(lo),
                f(hi),
                if good { "" } else { " (reversed)" }
            ));
        }
    }
    outcome(ok, parts.join("; "))
}

fn c09() -> Outcome {
    let (checks, dt) = timed(sbad_checks);
    let sel: Vec<Check> = checks.into_iter().filter(|c| c.name.starts_with("bandit")).collect();
    let exact = sel.iter().any(|c| c.name.contains("beta 0 vs BAD") && c.passed);
    let mut o = checks_outcome(&sel, dt, None);
    o.passed &= exact && sel.len() == 3;
    o
}

fn c10() -> Outcome {
    let (checks, dt) = timed(telescoping);
    let sel: Vec<Check> = checks.into_iter().filter(|c| !c.name.contains("bitwise")).collect();
    checks_outcome(&sel, dt, None)
}

fn c11() -> Outcome {
    let mut ok = true;
    let mut files = 0;
    for (name, ov) in [
        ("poad_keytoken.cfg", vec!["train.rollout_threads=1"]),
        ("poad_kitchen.cfg", vec!["train.rollout_threads=1", "train.total_env_steps=5000", "train.seed=7"]),
    ] {
        let cfg = load(name, &ov);
        let (a, b) = (tempfile::tempdir().expect("tmp"), tempfile::tempdir().expect("tmp"));
        run_experiment(&cfg, a.path()).expect("first run");
        run_experiment(&cfg, b.path()).expect("second run");
        for s in &cfg.train.seed {
            let rel = Path::new(&cfg.name()).join(format!("seed_{s}")).join("metrics.csv");
            let x = std::fs::read(a.path().join(&rel)).expect("metrics");
            let y = std::fs::read(b.path().join(&rel)).expect("metrics");
            ok &= !x.is_empty() && x == y;
            files += 1;
        }
    }
    outcome(ok, format!("{files} metrics files compared byte for byte"))
}

type Criterion = (&'static str, &'static str, fn() -> Outcome, bool);

fn main() -> ExitCode {
    // libtest flags such as --nocapture or a name filter are accepted and ignored, except
    // --list, which must print nothing for cargo's test discovery.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 11] = [
        ("c01", "BAD consistency", c01, false),
        ("c02", "discrepancy exactness", c02, false),
        ("c03", "discrepancy sweep shape", c03, false),
        ("c04", "naive(gamma_w=1) bitwise BAD", c04, false),
        ("c05", "gradient correctness", c05, false),
        ("c06", "POAD learning", c06, true),
        ("c07", "gamma_w ablation ordering", c07, true),
        ("c08", "gamma_a necessity", c08, true),
        ("c09", "sBAD equality", c09, false),
        ("c10", "telescoping advantage", c10, false),
        ("c11", "determinism", c11, true),
    ];
    let gate = verify(Suite::All);
    let gate_ok = gate.passed();
    println!(
        "gate verify(all): {} ({} checks)",
        if gate_ok { "green" } else { "RED" },
        gate.checks.len()
    );
    let mut failed = 0;
    for (id, title, run, training) in criteria {
        let t = Instant::now();
        let o = if training && !gate_ok {
            outcome(false, "skipped: verify(all) is not green")
        } else {
            match std::panic::catch_unwind(run) {
                Ok(o) => o,
                Err(p) => {
                    let msg = p
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_default();
                    outcome(false, format!("panicked: {msg}"))
                }
            }
        };
        failed += usize::from(!o.passed);
        println!(
            "{id} {} {title}: {} [{:.1?}]",
            if o.passed { "PASS" } else { "FAIL" },
            o.summary,
            t.elapsed()
        );
    }
    println!("acceptance: {} of 11 criteria passed", 11 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
