//! The `asbi` command line: `run`, `sweep`, `plot-data`, `validate-plugin`.
//!
//! Exit codes: 0 on success, 1 when a run or check fails, 2 for invalid
//! configuration, arguments or missing records.
//!
//! A run directory `<timestamp>-<seed>-<method>` holds `config.json` (the
//! resolved configuration), `history.json`, `run.json`, `summary.txt`, the
//! metric tables `logprob.csv`, `reperr.csv` and `intervol.csv` when they
//! apply, `error.txt` after a failure, and `estimators/` with the final
//! networks. A sweep directory `<timestamp>-sweep-<method>` holds one run
//! directory per seed plus `sweep.json`, `sweep_logprob.csv`,
//! `sweep_reperr.csv` and `sweep_summary.txt`.

mod config;
mod plotdata;
mod run;
mod sweep;

pub use config::{apply_overrides, ExperimentConfig, MetricsConfig, SimulatorConfig, SimulatorName, TargetConfig};
pub use plotdata::{plot_data, PlotError, PlotKind, ALHI_LOGPROB_FLOOR};
pub use run::{compute_metrics, execute, fresh_dir, timestamp, RunManifest};
pub use sweep::{aggregate, parse_seeds, quantile, sweep, SweepManifest, SweepRun};

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::simproto::validate_plugin;

/// Default output root when neither `--out` nor the config sets one.
pub const OUT_DIR_ENV: &str = "ASBI_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "asbi", version, about = "Active simulation-based inference experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `key=value` override of a config field (dotted path).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a config once per seed and aggregate the results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; `a-b` ranges are inclusive.
        #[arg(long, allow_hyphen_values = true)]
        seeds: String,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Emit a comma-separated table from a run or sweep directory.
    PlotData {
        dir: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Write to this file instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the protocol conformance checks against a plugin command.
    ValidatePlugin {
        #[arg(long, default_value_t = 10.0)]
        startup_timeout: f64,
        #[arg(long, default_value_t = 60.0)]
        request_timeout: f64,
        #[arg(required = true, trailing_var_arg = true, allow_hyphen_values = true)]
        command: Vec<String>,
    },
}

/// `--out`, then the config's `out`, then `$ASBI_OUT_DIR`, then `runs`.
pub fn output_root(flag: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn config_failure(e: &Error) -> ExitCode {
    eprintln!("asbi: {e}");
    ExitCode::from(2)
}

fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path, overrides).map_err(|e| config_failure(&e))
}

fn cmd_run(config: &Path, seed: Option<u64>, out: Option<&Path>, overrides: &[String]) -> ExitCode {
    let mut cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    let root = output_root(out, &cfg);
    let label = format!("{}-{}", cfg.run.seed, cfg.run.method.name());
    let dir = match fresh_dir(&root, &timestamp(), &label) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("asbi: cannot create run directory under {}: {e}", root.display());
            return ExitCode::from(1);
        }
    };
    println!("{}", dir.display());
    match execute(&cfg, &dir) {
        Ok(m) if m.succeeded => ExitCode::SUCCESS,
        Ok(m) => {
            eprintln!("asbi: run failed: {}", m.error.unwrap_or_default());
            ExitCode::from(1)
        }
        Err(e @ Error::Config(_)) => config_failure(&e),
        Err(e) => {
            eprintln!("asbi: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_sweep(config: &Path, seeds: &str, parallel: usize, out: Option<&Path>, overrides: &[String]) -> ExitCode {
    let cfg = match load(config, overrides) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let seeds = match parse_seeds(seeds) {
        Ok(s) if !s.is_empty() => s,
        Ok(_) => return config_failure(&Error::Config("empty seed list".into())),
        Err(e) => return config_failure(&e),
    };
    let root = output_root(out, &cfg);
    match sweep(&cfg, &seeds, parallel, &root, &timestamp()) {
        Ok((dir, m)) => {
            println!("{}", dir.display());
            let ok = m.runs.iter().filter(|r| r.succeeded).count();
            if ok < m.runs.len() {
                eprintln!("asbi: {} of {} runs failed", m.runs.len() - ok, m.runs.len());
            }
            if ok == 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("asbi: {e}");
            ExitCode::from(1)
        }
    }
}

fn cmd_plot_data(dir: &Path, kind: PlotKind, out: Option<&Path>) -> ExitCode {
    match plot_data(dir, kind) {
        Ok(text) => match plotdata::write_output(&text, out) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("asbi: {e}");
                ExitCode::from(1)
            }
        },
        Err(PlotError::Missing(m)) => {
            eprintln!("asbi: missing record {}", m.0.display());
            ExitCode::from(2)
        }
        Err(PlotError::Other(e)) => {
            eprintln!("asbi: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_validate_plugin(command: &[String], startup: f64, request: f64) -> ExitCode {
    if !(startup > 0.0 && request > 0.0) {
        return config_failure(&Error::Config("timeouts must be positive".into()));
    }
    let report = validate_plugin(command, Duration::from_secs_f64(startup), Duration::from_secs_f64(request));
    print!("{}", report.to_text());
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        ExitCode::SUCCESS
    } else {
        println!("{} of {} checks failed", report.failures(), report.checks.len());
        ExitCode::from(1)
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match &cli.command {
        Command::Run {
            config,
            seed,
            out,
            overrides,
        } => cmd_run(config, *seed, out.as_deref(), overrides),
        Command::Sweep {
            config,
            seeds,
            parallel,
            out,
            overrides,
        } => cmd_sweep(config, seeds, *parallel, out.as_deref(), overrides),
        Command::PlotData { dir, kind, out } => cmd_plot_data(dir, *kind, out.as_deref()),
        Command::ValidatePlugin {
            startup_timeout,
            request_timeout,
            command,
        } => cmd_validate_plugin(command, *startup_timeout, *request_timeout),
    }
}
