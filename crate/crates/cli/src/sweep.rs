//! Cartesian-product sweeps over config keys.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{split_override, valid_keys, ExperimentConfig};
use crate::run::{run_experiment, MergedRow};
use crate::CliError;

pub const DEFAULT_RUN_BUDGET: usize = 64;

/// One grid axis: a config key and the values it takes.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

/// Parses `section.key=v1,v2,...`.
pub fn parse_axis(s: &str) -> Result<Axis, CliError> {
    let (key, vals) = split_override(s)?;
    if !valid_keys().contains(&key) {
        return Err(CliError::UnknownKey {
            key,
            valid: valid_keys(),
        });
    }
    let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).collect();
    if values.iter().any(|v| v.is_empty()) {
        return Err(CliError::Usage(format!("empty value in grid axis {s:?}")));
    }
    Ok(Axis { key, values })
}

/// Every combination, first axis outermost. An empty grid yields one empty combination.
pub fn combinations(grid: &[Axis]) -> Vec<Vec<(String, String)>> {
    grid.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.into_iter()
            .flat_map(|combo| {
                axis.values.iter().map(move |v| {
                    let mut c = combo.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect()
    })
}

/// A grid point's `(key, value)` assignments.
pub type Combo = Vec<(String, String)>;

pub struct SweepResult {
    pub dir: PathBuf,
    /// `(combination, merged curve)` per run, in grid order.
    pub runs: Vec<(Combo, Vec<MergedRow>)>,
    pub table: PathBuf,
}

fn slug(combo: &[(String, String)]) -> String {
    combo
        .iter()
        .map(|(k, v)| format!("{}={v}", k.rsplit('.').next().unwrap_or(k)))
        .collect::<Vec<_>>()
        .join("_")
        .replace(['/', ' '], "-")
}

/// Runs every grid point of `base` (all of its seeds each) into `<root>/<name>/`, writing
/// one run directory per point plus `sweep.csv` in long format:
/// `<grid keys...>,env_steps,mean_return`.
pub fn sweep(
    base_text: &str,
    base_overrides: &[String],
    grid: &[Axis],
    root: &Path,
    budget: usize,
) -> Result<SweepResult, CliError> {
    let base = ExperimentConfig::resolve(base_text, base_overrides)?;
    let combos = combinations(grid);
    let runs = combos.len() * base.train.seed.len();
    if runs > budget {
        return Err(CliError::OverBudget { runs, budget });
    }
    let dir = root.join(format!("{}_sweep", base.name()));
    fs::create_dir_all(&dir)?;
    let mut out = Vec::new();
    for combo in combos {
        let mut ov = base_overrides.to_vec();
        ov.extend(combo.iter().map(|(k, v)| format!("{k}={v}")));
        let mut cfg = ExperimentConfig::resolve(base_text, &ov)?;
        let label = if combo.is_empty() { "baseline".to_string() } else { slug(&combo) };
        cfg.output.name = Some(label);
        let summary = run_experiment(&cfg, &dir)?;
        out.push((combo, summary.merged));
    }
    let mut csv: Vec<String> = grid.iter().map(|a| a.key.clone()).collect();
    csv.extend(["env_steps".to_string(), "mean_return".to_string()]);
    let mut text = csv.join(",") + "\n";
    for (combo, rows) in &out {
        for r in rows {
            let mut fields: Vec<String> = combo.iter().map(|(_, v)| v.clone()).collect();
            fields.push(r.env_steps.to_string());
            fields.push(r.mean.to_string());
            text.push_str(&fields.join(","));
            text.push('\n');
        }
    }
    let table = dir.join("sweep.csv");
    fs::write(&table, text)?;
    Ok(SweepResult {
        dir,
        runs: out,
        table,
    })
}
