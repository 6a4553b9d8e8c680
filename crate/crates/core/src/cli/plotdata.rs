use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;

use super::run::{read_round_table, RunManifest, HISTORY_FILE, INTERVOL_FILE, LOGPROB_FILE, MANIFEST_FILE, REPERR_FILE};
use super::sweep::{SweepManifest, SWEEP_FILE};
use crate::error::Result;
use crate::inference::RoundHistory;
use crate::metrics::join;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Logprob,
    Utility,
    Reperr,
    Intervol,
}

/// Values below this are reported as this for the likelihood-based active
/// method's log-probability table.
pub const ALHI_LOGPROB_FLOOR: f64 = -7.0;

/// A record the emitter needed but could not find.
#[derive(Debug)]
pub struct MissingRecord(pub PathBuf);

fn need(path: PathBuf) -> std::result::Result<PathBuf, MissingRecord> {
    if path.exists() {
        Ok(path)
    } else {
        Err(MissingRecord(path))
    }
}

fn run_dirs(dir: &Path) -> std::result::Result<Vec<PathBuf>, MissingRecord> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let sweep = need(dir.join(SWEEP_FILE)).map_err(|_| MissingRecord(dir.join(MANIFEST_FILE)))?;
    let m: SweepManifest = fs::read_to_string(&sweep)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .ok_or_else(|| MissingRecord(sweep.clone()))?;
    Ok(m.runs.iter().map(|r| dir.join(&r.dir)).collect())
}

pub enum PlotError {
    Missing(MissingRecord),
    Other(crate::Error),
}

impl From<MissingRecord> for PlotError {
    fn from(m: MissingRecord) -> Self {
        PlotError::Missing(m)
    }
}

impl From<crate::Error> for PlotError {
    fn from(e: crate::Error) -> Self {
        PlotError::Other(e)
    }
}

fn manifest(dir: &Path) -> std::result::Result<RunManifest, PlotError> {
    let p = need(dir.join(MANIFEST_FILE))?;
    let text = fs::read_to_string(&p).map_err(crate::Error::from)?;
    Ok(serde_json::from_str(&text).map_err(crate::Error::from)?)
}

fn emit_run(dir: &Path, kind: PlotKind, out: &mut String) -> std::result::Result<(), PlotError> {
    let m = manifest(dir)?;
    let (seed, method) = (m.seed, m.method.as_str());
    match kind {
        PlotKind::Logprob | PlotKind::Intervol => {
            let file = if kind == PlotKind::Logprob { LOGPROB_FILE } else { INTERVOL_FILE };
            for (round, mut v) in read_round_table(&need(dir.join(file))?)? {
                if kind == PlotKind::Logprob && method == "alhi" {
                    v = v.max(ALHI_LOGPROB_FLOOR);
                }
                let _ = writeln!(out, "{seed},{method},{round},{v}");
            }
        }
        PlotKind::Reperr => {
            let text = fs::read_to_string(need(dir.join(REPERR_FILE))?).map_err(crate::Error::from)?;
            for line in text.lines().skip(1) {
                let _ = writeln!(out, "{seed},{method},{line}");
            }
        }
        PlotKind::Utility => {
            let text = fs::read_to_string(need(dir.join(HISTORY_FILE))?).map_err(crate::Error::from)?;
            let h: RoundHistory = serde_json::from_str(&text).map_err(crate::Error::from)?;
            for r in &h.rounds {
                for u in &r.utilities {
                    let _ = writeln!(
                        out,
                        "{seed},{method},{},{},{},{},{},{},{}",
                        r.round,
                        u.action.index,
                        join(&u.action.values, ";"),
                        u.u_mean,
                        u.skipped_terms,
                        u.usable,
                        u.action.index == r.chosen_action.index
                    );
                }
            }
        }
    }
    Ok(())
}

pub fn header(kind: PlotKind) -> &'static str {
    match kind {
        PlotKind::Logprob => "seed,method,round,log_prob_true\n",
        PlotKind::Intervol => "seed,method,round,inter_vol\n",
        PlotKind::Reperr => "seed,method,action_index,action,mean,std\n",
        PlotKind::Utility => "seed,method,round,action_index,action,u_mean,skipped_terms,usable,chosen\n",
    }
}

/// The table for `kind` over a run directory or every run of a sweep.
pub fn plot_data(dir: &Path, kind: PlotKind) -> std::result::Result<String, PlotError> {
    let mut out = header(kind).to_string();
    for d in run_dirs(dir)? {
        emit_run(&d, kind, &mut out)?;
    }
    Ok(out)
}

pub(crate) fn write_output(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}
