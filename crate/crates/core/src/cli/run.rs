use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::density::{PriorDensity, TruncatedSamples};
use crate::error::{contract, Result};
use crate::inference::{RoundHistory, Runner};
use crate::metrics::{inter_vol, log_prob_true, rep_err, MetricReport, RepErrEntry};
use crate::seed::{rng_for, tag};
use crate::simulators::{Action, GridDeposit, Simulator};

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.json";
pub const MANIFEST_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const LOGPROB_FILE: &str = "logprob.csv";
pub const REPERR_FILE: &str = "reperr.csv";
pub const INTERVOL_FILE: &str = "intervol.csv";
pub const ERROR_FILE: &str = "error.txt";
pub const ESTIMATOR_DIR: &str = "estimators";

/// Small machine-readable record of how a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub method: String,
    pub simulator: String,
    pub rounds_requested: usize,
    pub rounds_completed: usize,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// `<timestamp>-<seed>-<method>` under `root`, suffixed if taken.
pub fn fresh_dir(root: &Path, stamp: &str, label: &str) -> Result<PathBuf> {
    fs::create_dir_all(root)?;
    let base = format!("{stamp}-{label}");
    let mut dir = root.join(&base);
    let mut k = 1;
    while dir.exists() {
        k += 1;
        dir = root.join(format!("{base}-{k}"));
    }
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn timestamp() -> String {
    chrono::Local::now().format("%Y%m%dT%H%M%S").to_string()
}

fn grid_action(sim: &dyn Simulator, values: &[f64]) -> Result<Action> {
    sim.spec()
        .action_grid
        .find(values)
        .cloned()
        .ok_or_else(|| contract(format!("metric action {values:?} is not on the grid")))
}

/// Metrics for a finished (or partial) history against known parameters.
pub fn compute_metrics(
    cfg: &ExperimentConfig,
    sim: &dyn Simulator,
    history: &RoundHistory,
    theta_true: &[f64],
) -> Result<MetricReport> {
    let m = &cfg.metrics;
    let seed = cfg.run.seed;
    let mut report = MetricReport::default();
    if m.log_prob {
        report.log_prob_true = history.posteriors().map(|p| log_prob_true(p, theta_true)).collect();
    }
    if m.rep_err && !history.rounds.is_empty() {
        let actions: Vec<Action> = match &m.rep_err_actions {
            Some(list) => list.iter().map(|v| grid_action(sim, v)).collect::<Result<_>>()?,
            None => sim.spec().action_grid.actions().to_vec(),
        };
        let posterior = history.final_posterior();
        for a in actions {
            let mut rng = rng_for(seed, &[tag::METRICS, 0, a.index as u64]);
            let (mean, std) = rep_err(sim, posterior, theta_true, &a, m.rep_err_samples, &mut rng)?;
            report.rep_err.insert(
                a.index,
                RepErrEntry {
                    action: a.values.clone(),
                    mean,
                    std,
                },
            );
        }
    }
    if m.inter_vol {
        let pour = GridDeposit::new(cfg.simulator.pouring.clone().unwrap_or_default());
        let action = match &m.inter_vol_action {
            Some(v) => grid_action(sim, v)?,
            None => sim.spec().action_grid.actions()[0].clone(),
        };
        let real = pour.depth_grid(theta_true, &action, None)?;
        let mut vols = Vec::new();
        for (r, p) in history.posteriors().enumerate() {
            let mut rng = rng_for(seed, &[tag::METRICS, 1, r as u64]);
            let TruncatedSamples { samples, .. } = p.sample(&mut rng, m.inter_vol_samples);
            let sims = samples
                .iter()
                .map(|t| pour.depth_grid(t, &action, None))
                .collect::<Result<Vec<_>>>()?;
            vols.push(inter_vol(&real, &sims)?);
        }
        report.inter_vol = Some(vols);
    }
    Ok(report)
}

fn summary(cfg: &ExperimentConfig, sim_name: &str, history: &RoundHistory, report: Option<&MetricReport>, error: Option<&str>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method: {}", history.method.name());
    let _ = writeln!(s, "simulator: {sim_name}");
    let _ = writeln!(s, "seed: {}", history.seed);
    let _ = writeln!(s, "rounds: {} of {}", history.rounds.len(), cfg.run.rounds);
    for r in &history.rounds {
        let _ = write!(s, "round {}: action {:?}", r.round, r.chosen_action.values);
        if let Some(u) = r.utilities.iter().find(|u| u.action.index == r.chosen_action.index) {
            let _ = write!(s, ", utility {:.4}", u.u_mean);
        }
        if let Some(lp) = report.and_then(|m| m.log_prob_true.get(r.round - 1)) {
            let _ = write!(s, ", log p(theta_true) {lp:.4}");
        }
        if let Some(ess) = r.effective_sample_size {
            let _ = write!(s, ", ESS {ess:.1}");
        }
        s.push('\n');
    }
    if let Some(m) = report {
        if !m.rep_err.is_empty() {
            s.push_str("reproduction error of the final posterior:\n");
            for e in m.rep_err.values() {
                let _ = writeln!(s, "  action {:?}: {:.4} (sd {:.4})", e.action, e.mean, e.std);
            }
        }
    }
    match error {
        Some(e) => {
            let _ = writeln!(s, "status: failed: {e}");
        }
        None => s.push_str("status: ok\n"),
    }
    s
}

/// Executes `cfg` and writes every artifact into `dir`. Partial results are
/// kept when a round fails.
pub fn execute(cfg: &ExperimentConfig, dir: &Path) -> Result<RunManifest> {
    fs::write(dir.join(CONFIG_FILE), cfg.to_json())?;
    let sim = cfg.build_simulator()?;
    let mut env = cfg.build_environment(sim.clone())?;
    let runner = Runner::new(sim.clone(), cfg.run.clone())?;
    let outcome = runner.run(env.as_mut(), PriorDensity::Box(sim.spec().param_bounds.clone()));
    drop(env);

    fs::write(dir.join(HISTORY_FILE), outcome.history.to_json()?)?;
    if let Some(est) = &outcome.final_estimators {
        let edir = dir.join(ESTIMATOR_DIR);
        fs::create_dir_all(&edir)?;
        for (d, e) in &est.by_obs_dim {
            e.save(&edir.join(format!("{}-obs{d}.json", cfg.run.method.name())))?;
        }
    }

    let mut error = outcome.error.as_ref().map(|e| e.to_string());
    let report = match &cfg.target.hidden_theta {
        Some(theta) => match compute_metrics(cfg, sim.as_ref(), &outcome.history, theta) {
            Ok(r) => Some(r),
            Err(e) => {
                error.get_or_insert_with(|| format!("metrics: {e}"));
                None
            }
        },
        None => None,
    };
    if let Some(r) = &report {
        if cfg.metrics.log_prob {
            fs::write(dir.join(LOGPROB_FILE), r.logprob_csv())?;
        }
        if cfg.metrics.rep_err {
            fs::write(dir.join(REPERR_FILE), r.reperr_csv())?;
        }
        if let Some(csv) = r.intervol_csv() {
            fs::write(dir.join(INTERVOL_FILE), csv)?;
        }
    }
    if let Some(e) = &error {
        fs::write(dir.join(ERROR_FILE), format!("{e}\n"))?;
    }
    fs::write(dir.join(SUMMARY_FILE), summary(cfg, &sim.spec().name, &outcome.history, report.as_ref(), error.as_deref()))?;
    let manifest = RunManifest {
        seed: cfg.run.seed,
        method: cfg.run.method.name().to_string(),
        simulator: sim.spec().name.clone(),
        rounds_requested: cfg.run.rounds,
        rounds_completed: outcome.history.rounds.len(),
        succeeded: error.is_none(),
        error,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Per-action final RepErr means of one run, read back from its table.
pub fn read_reperr(dir: &Path) -> Result<BTreeMap<usize, (String, f64)>> {
    let text = fs::read_to_string(dir.join(REPERR_FILE))?;
    let mut out = BTreeMap::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(contract(format!("malformed {REPERR_FILE} line {line:?}")));
        }
        let idx: usize = f[0].parse().map_err(|_| contract(format!("bad action index in {line:?}")))?;
        let mean: f64 = f[2].parse().map_err(|_| contract(format!("bad mean in {line:?}")))?;
        out.insert(idx, (f[1].to_string(), mean));
    }
    Ok(out)
}

/// `(round, value)` rows of a two-column per-round table.
pub fn read_round_table(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .map(|line| {
            let (r, v) = line
                .split_once(',')
                .ok_or_else(|| contract(format!("malformed line {line:?} in {}", path.display())))?;
            Ok((
                r.parse().map_err(|_| contract(format!("bad round in {line:?}")))?,
                v.parse().map_err(|_| contract(format!("bad value in {line:?}")))?,
            ))
        })
        .collect()
}
