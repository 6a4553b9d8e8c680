use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{execute, fresh_dir, read_reperr, read_round_table, LOGPROB_FILE};
use crate::error::{Error, Result};

pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_LOGPROB_FILE: &str = "sweep_logprob.csv";
pub const SWEEP_REPERR_FILE: &str = "sweep_reperr.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub seed: u64,
    /// Relative to the sweep directory.
    pub dir: String,
    pub succeeded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub method: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<SweepRun>,
}

/// Parses `0,3,5-9` into seeds (ranges inclusive).
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad seed list entry {part:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}

/// Linear-interpolation quantile of sorted finite data; `NaN` when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn describe(values: &[f64]) -> (f64, f64, f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q25, q50, q75) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    (q50, q25, q75, v[0], v[v.len() - 1])
}

/// Runs `base` once per seed on up to `parallel` threads and aggregates the
/// per-round log-probabilities and final RepErr tables.
pub fn sweep(base: &ExperimentConfig, seeds: &[u64], parallel: usize, root: &Path, stamp: &str) -> Result<(PathBuf, SweepManifest)> {
    if seeds.is_empty() {
        return Err(Error::Config("empty seed list".into()));
    }
    let method = base.run.method.name().to_string();
    let dir = fresh_dir(root, stamp, &format!("sweep-{method}"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut cfg = base.clone();
                cfg.run.seed = seed;
                let rel = format!("{stamp}-{seed}-{method}");
                let run_dir = dir.join(&rel);
                let outcome = fs::create_dir_all(&run_dir)
                    .map_err(Error::from)
                    .and_then(|_| execute(&cfg, &run_dir));
                match outcome {
                    Ok(m) => SweepRun {
                        seed,
                        dir: rel,
                        succeeded: m.succeeded,
                        error: m.error,
                    },
                    Err(e) => SweepRun {
                        seed,
                        dir: rel,
                        succeeded: false,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let manifest = SweepManifest {
        method,
        seeds: seeds.to_vec(),
        runs,
    };
    fs::write(dir.join(SWEEP_FILE), serde_json::to_string_pretty(&manifest)?)?;
    aggregate(&dir, &manifest)?;
    Ok((dir, manifest))
}

/// Writes the sweep-level tables from the run directories listed in
/// `manifest`, in seed order.
pub fn aggregate(dir: &Path, manifest: &SweepManifest) -> Result<()> {
    let mut by_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut by_action: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    for r in &manifest.runs {
        let rd = dir.join(&r.dir);
        if rd.join(LOGPROB_FILE).exists() {
            for (round, v) in read_round_table(&rd.join(LOGPROB_FILE))? {
                by_round.entry(round).or_default().push(v);
            }
        }
        if let Ok(rows) = read_reperr(&rd) {
            for (idx, (label, mean)) in rows {
                by_action.entry(idx).or_insert_with(|| (label, Vec::new())).1.push(mean);
            }
        }
    }
    let mut lp = String::from("round,runs,median,q25,q75,iqr,min,max\n");
    for (round, v) in &by_round {
        let (m, a, b, lo, hi) = describe(v);
        let _ = writeln!(lp, "{round},{},{m},{a},{b},{},{lo},{hi}", v.len(), b - a);
    }
    fs::write(dir.join(SWEEP_LOGPROB_FILE), &lp)?;
    let mut re = String::from("action_index,action,runs,median,q25,q75,iqr\n");
    for (idx, (label, v)) in &by_action {
        let (m, a, b, _, _) = describe(v);
        let _ = writeln!(re, "{idx},{label},{},{m},{a},{b},{}", v.len(), b - a);
    }
    fs::write(dir.join(SWEEP_REPERR_FILE), &re)?;

    let ok = manifest.runs.iter().filter(|r| r.succeeded).count();
    let mut s = format!(
        "method: {}\nseeds: {:?}\nsucceeded: {ok} of {}\n",
        manifest.method,
        manifest.seeds,
        manifest.runs.len()
    );
    for r in manifest.runs.iter().filter(|r| !r.succeeded) {
        let _ = writeln!(s, "seed {} failed: {}", r.seed, r.error.as_deref().unwrap_or("unknown error"));
    }
    if !by_round.is_empty() {
        s.push_str("log p(theta_true) by round (median [q25, q75]):\n");
        for (round, v) in &by_round {
            let (m, a, b, _, _) = describe(v);
            let _ = writeln!(s, "  round {round}: {m:.4} [{a:.4}, {b:.4}]");
        }
    }
    fs::write(dir.join(SWEEP_SUMMARY_FILE), s)?;
    Ok(())
}
