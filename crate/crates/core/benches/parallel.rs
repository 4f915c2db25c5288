//! Sequential vs rayon execution for the three data-parallel loops: value-iteration
//! sweeps, rollout workers and discrepancy-sweep cells.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use tokrl::backups::BackupMode;
use tokrl::envs::EnvConfig;
use tokrl::mdp::{RolloutOptions, RolloutWorker};
use tokrl::oracle::{
    discrepancy_sweep, enumerate_prefix_model, value_iteration_with, DpOptions, OracleError,
    DEFAULT_NODE_BUDGET,
};
use tokrl::par::{map_slice_mut, Execution};
use tokrl::policy::{AutoregressivePolicy, Backend, Encoder};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn value_iteration(c: &mut Criterion) {
    let env = EnvConfig::kitchen(4, 4).build_enumerable().unwrap();
    let model = enumerate_prefix_model(env.as_enumerable(), DEFAULT_NODE_BUDGET).unwrap();
    let mut g = c.benchmark_group("value_iteration_kitchen_4x4");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = DpOptions {
            tol: 1e-10,
            exec,
            ..DpOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| value_iteration_with(&model, BackupMode::bad(0.95), &opts).unwrap())
        });
    }
    g.finish();
}

fn rollouts(c: &mut Criterion) {
    let cfg = EnvConfig::kitchen(5, 5);
    let probe = cfg.build().unwrap();
    let enc = Encoder::new(probe.observation_count(), probe.vocab().len(), probe.max_action_len());
    let policy = AutoregressivePolicy::new(Backend::SmallNet, enc, 1);
    let opts = RolloutOptions::default();
    let mut g = c.benchmark_group("rollouts_8_workers_kitchen_5x5");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || {
                    (0..8)
                        .map(|w| RolloutWorker::new(cfg.build().unwrap(), 7, w))
                        .collect::<Vec<_>>()
                },
                |mut workers| {
                    map_slice_mut(exec, &mut workers, |_, wk| {
                        wk.collect(&policy, None, 256, &opts).unwrap()
                    })
                },
                criterion::BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let build = |len: usize| {
        let env = EnvConfig::chain(3, len)
            .build_enumerable()
            .map_err(|e| OracleError::Domain(e.to_string()))?;
        enumerate_prefix_model(env.as_enumerable(), DEFAULT_NODE_BUDGET)
    };
    let mut g = c.benchmark_group("discrepancy_sweep_chain_k3");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = DpOptions {
            tol: 1e-12,
            exec,
            ..DpOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                discrepancy_sweep(build, &[0.5, 0.8, 0.9, 0.95, 0.99, 1.0], &[2, 4, 8], 0.95, &opts)
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, value_iteration, rollouts, sweep);
criterion_main!(benches);
