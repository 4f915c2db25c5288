//! Experiment configuration: TOML with `[env]`, `[algo]`, `[train]` and `[output]`
//! sections, layered as shipped defaults < config file < command-line overrides.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use tokrl::envs::{EnvConfig, EnvKind};
use tokrl::par::Execution;
use tokrl::policy::Backend;
use tokrl::trainer::{AdvantageEstimator, Algo, TrainConfig};

use crate::CliError;

/// The shipped defaults file.
pub const DEFAULTS_TOML: &str = include_str!("../../../configs/defaults.toml");

/// Keys that are valid but absent from the defaults file.
const OPTIONAL_KEYS: [&str; 4] = [
    "algo.gamma_w",
    "train.ppo_epochs",
    "train.num_mini_batch",
    "output.name",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoSection {
    pub name: Algo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_w: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub backend: Backend,
    pub gamma_a: f64,
    pub lambda: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ppo_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_mini_batch: Option<usize>,
    pub batch_size: usize,
    pub rollout_threads: usize,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub kl_threshold: f64,
    pub total_env_steps: usize,
    pub seed: Vec<u64>,
    pub advantage: AdvantageEstimator,
    pub normalize_advantages: bool,
    pub use_mask: bool,
    pub checkpoint_every: usize,
    pub return_window: usize,
    pub exec: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algo: AlgoSection,
    pub train: TrainSection,
    pub output: OutputSection,
}

fn defaults_table() -> Table {
    DEFAULTS_TOML
        .parse::<Table>()
        .expect("shipped defaults parse")
}

/// Every addressable `section.key`.
pub fn valid_keys() -> Vec<String> {
    let mut keys = BTreeSet::new();
    for (section, v) in defaults_table() {
        if let Value::Table(t) = v {
            keys.extend(t.keys().map(|k| format!("{section}.{k}")));
        }
    }
    keys.extend(OPTIONAL_KEYS.iter().map(|k| k.to_string()));
    keys.into_iter().collect()
}

fn unknown(key: &str) -> CliError {
    CliError::UnknownKey {
        key: key.to_string(),
        valid: valid_keys(),
    }
}

fn check_keys(table: &Table) -> Result<(), CliError> {
    let valid = valid_keys();
    for (section, v) in table {
        let Value::Table(t) = v else {
            return Err(unknown(section));
        };
        for k in t.keys() {
            let full = format!("{section}.{k}");
            if !valid.contains(&full) {
                return Err(unknown(&full));
            }
        }
    }
    Ok(())
}

fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_scalar(s: &str) -> Value {
    let s = s.trim();
    match format!("v = {s}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(s.into())),
        Err(_) => Value::String(s.to_string()),
    }
}

/// Parses an override value. Comma-separated values become arrays; a single value for an
/// array-typed key is wrapped.
fn parse_value(raw: &str, wants_array: bool) -> Value {
    let raw = raw.trim();
    if raw.starts_with('[') {
        return parse_scalar(raw);
    }
    if raw.contains(',') || wants_array {
        return Value::Array(raw.split(',').map(parse_scalar).collect());
    }
    parse_scalar(raw)
}

/// Splits `section.key=value` (leading dashes allowed).
pub fn split_override(s: &str) -> Result<(String, String), CliError> {
    let s = s.trim_start_matches('-');
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not key=value")))?;
    Ok((k.trim().to_string(), v.to_string()))
}

fn apply_override(table: &mut Table, key: &str, raw: &str) -> Result<(), CliError> {
    if !valid_keys().iter().any(|k| k == key) {
        return Err(unknown(key));
    }
    let (section, field) = key.split_once('.').expect("valid keys are dotted");
    let defaults = defaults_table();
    let wants_array = matches!(
        defaults.get(section).and_then(|s| s.get(field)),
        Some(Value::Array(_))
    );
    let sec = table
        .entry(section.to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = sec else {
        return Err(unknown(section));
    };
    sec.insert(field.to_string(), parse_value(raw, wants_array));
    Ok(())
}

impl ExperimentConfig {
    /// The shipped defaults.
    pub fn defaults() -> Self {
        Self::resolve("", &[]).expect("shipped defaults are valid")
    }

    /// Layers `file_text` and `overrides` (`section.key=value`) over the defaults.
    pub fn resolve(file_text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let file: Table = file_text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        check_keys(&file)?;
        let mut table = defaults_table();
        merge(&mut table, file);
        for o in overrides {
            let (k, v) = split_override(o)?;
            apply_override(&mut table, &k, &v)?;
        }
        let cfg: ExperimentConfig = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        Self::resolve(&std::fs::read_to_string(path)?, overrides)
    }

    /// Canonical TOML; parsing it back yields the same config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn name(&self) -> String {
        self.output.name.clone().unwrap_or_else(|| {
            let env = match self.env.kind {
                EnvKind::KeyToken => "keytoken",
                EnvKind::Chain => "chain",
                EnvKind::Kitchen => "kitchen",
            };
            format!("{}_{env}", self.algo.name.name())
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.train.seed.is_empty() {
            return Err(CliError::Config("train.seed must list at least one seed".into()));
        }
        self.env.build()?;
        for &s in &self.train.seed {
            self.train_config(s)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// The trainer config for one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        let base = TrainConfig::new(self.algo.name);
        TrainConfig {
            algo: self.algo.name,
            backend: t.backend,
            gamma_a: t.gamma_a,
            gamma_w: match self.algo.name {
                Algo::Ntpo => self.algo.gamma_w,
                _ => None,
            },
            lambda: t.lambda,
            actor_lr: t.actor_lr,
            critic_lr: t.critic_lr,
            ppo_epochs: t.ppo_epochs.unwrap_or(base.ppo_epochs),
            num_mini_batch: t.num_mini_batch.unwrap_or(base.num_mini_batch),
            batch_size: t.batch_size,
            rollout_threads: t.rollout_threads,
            clip_eps: t.clip_eps,
            value_coef: t.value_coef,
            entropy_coef: t.entropy_coef,
            max_grad_norm: t.max_grad_norm,
            kl_threshold: t.kl_threshold,
            total_env_steps: t.total_env_steps,
            seed,
            advantage: t.advantage,
            normalize_advantages: t.normalize_advantages,
            use_mask: t.use_mask,
            checkpoint_every: t.checkpoint_every,
            return_window: t.return_window,
            exec: t.exec,
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
