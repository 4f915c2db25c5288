use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use tokrl::backups::BackupMode;
use tokrl::oracle::DpOptions;
use tokrl_cli::config::ExperimentConfig;
use tokrl_cli::run::{load_config, output_root, run_experiment};
use tokrl_cli::sweep::{parse_axis, sweep, DEFAULT_RUN_BUDGET};
use tokrl_cli::verify::{verify, Suite};
use tokrl_cli::{dp, plotdata, CliError};

/// Token-level RL experiments: training runs, oracle checks, sweeps and plot data.
///
/// Output goes under `output.dir` of the config unless TOKRL_OUT is set.
#[derive(Parser)]
#[command(name = "tokrl", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of a config and merge the curves.
    Run {
        /// A .toml/.cfg config, or a manifest.json from an earlier run.
        config: PathBuf,
        /// Overrides such as --train.actor_lr=0.03 or train.seed=1,2,3.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run the self-check suites; exits non-zero when any check fails.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Cartesian sweep over config keys.
    Sweep {
        config: PathBuf,
        /// Axis such as train.actor_lr=0.01,0.03; repeatable.
        #[arg(long = "grid")]
        grid: Vec<String>,
        /// Refuse sweeps with more runs (grid points times seeds) than this.
        #[arg(long, default_value_t = DEFAULT_RUN_BUDGET)]
        max_runs: usize,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Smoothed mean and one-std bands from merged run directories, as CSV.
    Plotdata {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        window: usize,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the environment of a config exactly and report fixed-point statistics.
    Dp {
        /// Config supplying the environment; defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "bad")]
        mode: DpMode,
        #[arg(long, default_value_t = 0.95)]
        gamma_a: f64,
        #[arg(long, default_value_t = 0.95)]
        gamma_w: f64,
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DpMode {
    Action,
    Naive,
    Bad,
    SoftBad,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config, overrides } => {
            let cfg = load_config(&config, &overrides)?;
            let root = output_root(&cfg);
            let summary = run_experiment(&cfg, &root)
                .with_context(|| format!("run {} failed", cfg.name()))?;
            if let Some(last) = summary.merged.last() {
                println!(
                    "{}: {} seeds, env_steps {}, mean_return {:.4} ± {:.4}",
                    summary.dir.display(),
                    last.n_seeds,
                    last.env_steps,
                    last.mean,
                    last.std
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { suite, json } => {
            let report = verify(suite);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.render());
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Sweep {
            config,
            grid,
            max_runs,
            overrides,
        } => {
            let text = if config.extension().is_some_and(|e| e == "json") {
                load_config(&config, &[])?.to_toml()
            } else {
                std::fs::read_to_string(&config)
                    .with_context(|| format!("reading {}", config.display()))?
            };
            let axes = grid.iter().map(|g| parse_axis(g)).collect::<Result<Vec<_>, _>>()?;
            let base = ExperimentConfig::resolve(&text, &overrides)?;
            let res = sweep(&text, &overrides, &axes, &output_root(&base), max_runs)?;
            println!("{} runs; table at {}", res.runs.len(), res.table.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Plotdata { dirs, window, out } => {
            let csv = plotdata::plotdata(&dirs, window)?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Dp {
            config,
            mode,
            gamma_a,
            gamma_w,
            beta,
            tol,
            overrides,
        } => {
            let cfg = match config {
                Some(p) => load_config(&p, &overrides)?,
                None => ExperimentConfig::resolve("", &overrides)?,
            };
            let mode = match mode {
                DpMode::Action => BackupMode::action_level(gamma_a),
                DpMode::Naive => BackupMode::naive(gamma_w, gamma_a),
                DpMode::Bad => BackupMode::bad(gamma_a),
                DpMode::SoftBad => BackupMode::soft_bad(beta, gamma_a),
            };
            mode.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let opts = DpOptions {
                tol,
                ..DpOptions::default()
            };
            let report = dp::dp(&cfg.env, mode, &opts)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
