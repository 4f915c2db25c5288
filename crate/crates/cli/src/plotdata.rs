//! Smoothed mean/std bands from merged run curves, as a tidy CSV.

use std::path::{Path, PathBuf};

use crate::run::{read_merged, MergedRow};
use crate::CliError;

pub const PLOT_HEADER: &str = "label,env_steps,mean,lo,hi";

#[derive(Clone, Debug, PartialEq)]
pub struct PlotRow {
    pub label: String,
    pub env_steps: usize,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Trailing moving average over at most `window` points (fewer at the start).
///
/// Averages offsets from the window's first point, which keeps constant series exact.
pub fn smooth(xs: &[f64], window: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let a = xs[lo];
            a + xs[lo..=i].iter().map(|x| x - a).sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Smooths one merged curve; bands are `mean ± std`, both smoothed.
pub fn bands(label: &str, rows: &[MergedRow], window: usize) -> Result<Vec<PlotRow>, CliError> {
    if window == 0 {
        return Err(CliError::Plot("smoothing window must be at least 1".into()));
    }
    if window > rows.len() {
        return Err(CliError::Plot(format!(
            "window {window} exceeds the {} points of {label}",
            rows.len()
        )));
    }
    let mean = smooth(&rows.iter().map(|r| r.mean).collect::<Vec<_>>(), window);
    let sd = smooth(&rows.iter().map(|r| r.std).collect::<Vec<_>>(), window);
    Ok(rows
        .iter()
        .zip(mean.iter().zip(&sd))
        .map(|(r, (&m, &s))| PlotRow {
            label: label.to_string(),
            env_steps: r.env_steps,
            mean: m,
            lo: m - s,
            hi: m + s,
        })
        .collect())
}

/// Label of a run directory: its final path component.
pub fn label_of(dir: &Path) -> String {
    dir.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn plotdata(run_dirs: &[PathBuf], window: usize) -> Result<String, CliError> {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for d in run_dirs {
        let rows = read_merged(&d.join("merged.csv"))?;
        for r in bands(&label_of(d), &rows, window)? {
            out.push_str(&format!("{},{},{},{},{}\n", r.label, r.env_steps, r.mean, r.lo, r.hi));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(means: &[f64], stds: &[f64]) -> Vec<MergedRow> {
        means
            .iter()
            .zip(stds)
            .enumerate()
            .map(|(i, (&mean, &std))| MergedRow {
                env_steps: 100 * (i + 1),
                update: i + 1,
                n_seeds: 3,
                mean,
                std,
            })
            .collect()
    }

    #[test]
    fn window_one_passes_through() {
        let r = rows(&[0.1, 0.5, 0.3], &[0.0, 0.1, 0.2]);
        let b = bands("x", &r, 1).unwrap();
        for (p, m) in b.iter().zip(&r) {
            assert_eq!(p.mean, m.mean);
            assert_eq!(p.lo, m.mean - m.std);
        }
    }

    #[test]
    fn constant_series_is_unchanged() {
        let r = rows(&[0.7; 6], &[0.0; 6]);
        for w in 1..=6 {
            assert!(bands("c", &r, w).unwrap().iter().all(|p| p.mean == 0.7 && p.hi == 0.7));
        }
    }

    #[test]
    fn window_longer_than_series_is_an_error() {
        assert!(matches!(bands("x", &rows(&[1.0], &[0.0]), 2), Err(CliError::Plot(_))));
        assert!(bands("x", &rows(&[1.0], &[0.0]), 0).is_err());
    }

    #[test]
    fn hand_computed_bands() {
        // three seeds: (0, 1, 2), (0.3, 0.6, 0.9), (0.5, 0.5, 0.5) per update
        let r = rows(&[1.0, 0.6, 0.5], &[(2.0f64 / 3.0).sqrt(), (0.06f64).sqrt(), 0.0]);
        let b = bands("h", &r, 2).unwrap();
        assert!((b[1].mean - 0.8).abs() < 1e-12);
        let s = ((2.0f64 / 3.0).sqrt() + 0.06f64.sqrt()) / 2.0;
        assert!((b[1].hi - (0.8 + s)).abs() < 1e-12);
        assert!((b[2].mean - 0.55).abs() < 1e-12);
    }
}
