//! Multi-seed runs with per-seed metrics, a merged mean/std file and a manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use tokrl::trainer::{train_with, MetricsRow, RunArtifacts, TrainOutput};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MERGED_HEADER: &str = "env_steps,update,n_seeds,mean,std";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
    pub status: String,
    /// Canonical TOML of the resolved config; enough to re-run.
    pub config: String,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The embedded config, after checking it against the recorded hash.
    pub fn config(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = ExperimentConfig::resolve(&self.config, &[])?;
        let found = cfg.hash();
        if found != self.config_hash {
            return Err(CliError::HashMismatch {
                expected: self.config_hash.clone(),
                found,
            });
        }
        Ok(cfg)
    }
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub seeds: Vec<(u64, RunArtifacts)>,
    pub merged: Vec<MergedRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergedRow {
    pub env_steps: usize,
    pub update: usize,
    pub n_seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Elementwise mean and population std of `mean_return` across seeds, by update index.
/// Updates missing from some seeds use the seeds that have them.
pub fn merge_metrics(per_seed: &[&[MetricsRow]]) -> Vec<MergedRow> {
    let n = per_seed.iter().map(|m| m.len()).max().unwrap_or(0);
    (0..n)
        .map(|i| {
            let rows: Vec<&MetricsRow> = per_seed.iter().filter_map(|m| m.get(i)).collect();
            let xs: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
            let k = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / k;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k).sqrt();
            MergedRow {
                env_steps: rows[0].env_steps,
                update: rows[0].update,
                n_seeds: xs.len(),
                mean,
                std,
            }
        })
        .collect()
}

pub fn write_merged(path: &Path, rows: &[MergedRow]) -> Result<(), CliError> {
    let mut s = String::from(MERGED_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.env_steps, r.update, r.n_seeds, r.mean, r.std));
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_merged(path: &Path) -> Result<Vec<MergedRow>, CliError> {
    let text = fs::read_to_string(path)?;
    let bad = |l: &str| CliError::Plot(format!("{}: malformed row {l:?}", path.display()));
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(MergedRow {
                env_steps: f[0].parse().map_err(|_| bad(l))?,
                update: f[1].parse().map_err(|_| bad(l))?,
                n_seeds: f[2].parse().map_err(|_| bad(l))?,
                mean: f[3].parse().map_err(|_| bad(l))?,
                std: f[4].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

/// Output root: `TOKRL_OUT` if set, else the config's `output.dir`.
pub fn output_root(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os("TOKRL_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output.dir.clone())
}

/// Trains every seed into `<root>/<name>/seed_<s>/`, then writes `merged.csv` and
/// `manifest.json`. A failure leaves finished seeds in place plus a `FAILED` marker.
pub fn run_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<RunSummary, CliError> {
    let name = cfg.name();
    let dir = root.join(&name);
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join("FAILED"));
    fs::write(dir.join("config.toml"), cfg.to_toml())?;
    let started = Instant::now();
    let env_cfg = cfg.env.clone();
    let factory = move || env_cfg.build();
    let mut seeds = Vec::new();
    let mut failure = None;
    for &seed in &cfg.train.seed {
        let out = TrainOutput {
            dir: Some(dir.join(format!("seed_{seed}"))),
        };
        match train_with(&cfg.train_config(seed), &factory, &out) {
            Ok(a) => seeds.push((seed, a)),
            Err(e) => {
                failure = Some((seed, e));
                break;
            }
        }
    }
    let merged = {
        let series: Vec<&[MetricsRow]> = seeds.iter().map(|(_, a)| a.metrics.as_slice()).collect();
        merge_metrics(&series)
    };
    if !merged.is_empty() {
        write_merged(&dir.join("merged.csv"), &merged)?;
    }
    let manifest = Manifest {
        name,
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: cfg.train.seed.clone(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        status: if failure.is_some() { "failed" } else { "ok" }.into(),
        config: cfg.to_toml(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    if let Some((seed, e)) = failure {
        fs::write(dir.join("FAILED"), format!("seed {seed}: {e}\n"))?;
        return Err(e.into());
    }
    Ok(RunSummary { dir, seeds, merged })
}

/// Loads a config from a `.toml`/`.cfg` file, or from a run manifest (`.json`), whose
/// embedded config must match its recorded hash.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    if path.extension().is_some_and(|e| e == "json") {
        let cfg = Manifest::read(path)?.config()?;
        if overrides.is_empty() {
            return Ok(cfg);
        }
        return ExperimentConfig::resolve(&cfg.to_toml(), overrides);
    }
    ExperimentConfig::load(path, overrides)
}
