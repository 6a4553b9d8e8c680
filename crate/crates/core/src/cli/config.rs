use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::density::{BoxPrior, BoxRecord};
use crate::error::{Error, Result};
use crate::inference::RunConfig;
use crate::seed::{derive_seed, tag};
use crate::simproto::{PluginEnvironment, PluginSimulator};
use crate::simulators::{
    Action, ActionGrid, BoxCollision, BoxSurrogate, Environment, GridDeposit, GridDepositConfig, Observation,
    SimulatedEnvironment, Simulator, SimulatorSpec, ToySimulator,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulatorName {
    Toy,
    Box,
    Pouring,
    External,
}

fn default_startup() -> f64 {
    10.0
}

fn default_request() -> f64 {
    120.0
}

/// Which simulator to run and what to change about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorConfig {
    pub name: SimulatorName,
    /// Plugin command line; required for `external`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub command: Vec<String>,
    /// Replaces the builtin parameter box; required for `external`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_bounds: Option<BoxRecord>,
    /// Replaces the builtin action grid; required for `external`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_grid: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_constants: Option<BoxSurrogate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pouring: Option<GridDepositConfig>,
    #[serde(default = "default_startup")]
    pub startup_timeout_secs: f64,
    #[serde(default = "default_request")]
    pub request_timeout_secs: f64,
}

/// The system observed during inference: a simulator at hidden parameters or
/// an external environment plugin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

fn thousand() -> usize {
    1000
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub log_prob: bool,
    #[serde(default = "yes")]
    pub rep_err: bool,
    /// Actions at which RepErr is reported; every grid action when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rep_err_actions: Option<Vec<Vec<f64>>>,
    #[serde(default = "thousand")]
    pub rep_err_samples: usize,
    /// Per-round intersection volume; pouring only.
    #[serde(default)]
    pub inter_vol: bool,
    /// Action used for the intersection volume; the first grid action when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_vol_action: Option<Vec<f64>>,
    #[serde(default = "hundred")]
    pub inter_vol_samples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all metric fields have defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub simulator: SimulatorConfig,
    #[serde(default)]
    pub run: RunConfig,
    pub target: TargetConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    /// Output root. `--out` overrides it; the environment variable applies
    /// when neither is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Applies `key=value` overrides to a JSON document. Keys are dotted paths
/// (`run.rounds`, `target.hidden_theta.0`); values parse as JSON and fall
/// back to strings.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("override {o:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(cfg_err(format!("override key {key:?} has an empty segment")));
        }
        let mut node = &mut *doc;
        for (i, p) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            node = match node {
                Value::Object(map) => {
                    if last {
                        map.insert(p.to_string(), value.clone());
                        break;
                    }
                    map.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()))
                }
                Value::Array(items) => {
                    let idx: usize = p
                        .parse()
                        .map_err(|_| cfg_err(format!("override key {key:?}: {p:?} is not an index")))?;
                    let len = items.len();
                    let slot = items
                        .get_mut(idx)
                        .ok_or_else(|| cfg_err(format!("override key {key:?}: index {idx} out of range ({len})")))?;
                    if last {
                        *slot = value.clone();
                        break;
                    }
                    slot
                }
                _ => return Err(cfg_err(format!("override key {key:?}: {p:?} is not inside an object"))),
            };
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_value(doc: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(doc).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| cfg_err(format!("config is not valid JSON: {e}")))?;
        apply_overrides(&mut doc, overrides)?;
        Self::from_value(doc)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, overrides)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        let s = &self.simulator;
        if s.name == SimulatorName::External && (s.command.is_empty() || s.param_bounds.is_none() || s.action_grid.is_none()) {
            return Err(cfg_err("simulator.name = external needs command, param_bounds and action_grid"));
        }
        if s.name != SimulatorName::External && !s.command.is_empty() {
            return Err(cfg_err("simulator.command is only used with simulator.name = external"));
        }
        if s.box_constants.is_some() && s.name != SimulatorName::Box {
            return Err(cfg_err("simulator.box_constants only applies to the box simulator"));
        }
        if s.pouring.is_some() && s.name != SimulatorName::Pouring {
            return Err(cfg_err("simulator.pouring only applies to the pouring simulator"));
        }
        if !(s.startup_timeout_secs > 0.0 && s.request_timeout_secs > 0.0) {
            return Err(cfg_err("simulator timeouts must be positive"));
        }
        match (&self.target.hidden_theta, &self.target.command) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => return Err(cfg_err("target needs exactly one of hidden_theta and command")),
        }
        if self.target.command.as_ref().is_some_and(|c| c.is_empty()) {
            return Err(cfg_err("target.command is empty"));
        }
        if self.metrics.inter_vol && s.name != SimulatorName::Pouring {
            return Err(cfg_err("metrics.inter_vol needs the pouring simulator"));
        }
        if self.metrics.rep_err_samples == 0 || self.metrics.inter_vol_samples == 0 {
            return Err(cfg_err("metric sample counts must be at least 1"));
        }
        Ok(())
    }

    /// Builds the simulator, applying grid and bound overrides.
    pub fn build_simulator(&self) -> Result<Arc<dyn Simulator>> {
        let s = &self.simulator;
        let bounds = s.param_bounds.clone().map(BoxPrior::try_from).transpose()?;
        let grid = s.action_grid.clone().map(ActionGrid::new).transpose()?;
        let base: Arc<dyn Simulator> = match s.name {
            SimulatorName::Toy => Arc::new(ToySimulator::new()),
            SimulatorName::Box => Arc::new(BoxCollision::new(s.box_constants.clone().unwrap_or_default())),
            SimulatorName::Pouring => Arc::new(GridDeposit::new(s.pouring.clone().unwrap_or_default())),
            SimulatorName::External => {
                let mut p = PluginSimulator::launch(
                    &s.command,
                    bounds.expect("validated"),
                    grid.expect("validated"),
                    Duration::from_secs_f64(s.startup_timeout_secs),
                )?;
                p.request_timeout = Duration::from_secs_f64(s.request_timeout_secs);
                return Ok(Arc::new(p));
            }
        };
        if bounds.is_none() && grid.is_none() {
            return Ok(base);
        }
        let mut spec = base.spec().clone();
        if let Some(b) = bounds {
            if b.dim() != spec.param_dim {
                return Err(cfg_err(format!(
                    "simulator.param_bounds has {} dimensions, {} needs {}",
                    b.dim(),
                    spec.name,
                    spec.param_dim
                )));
            }
            spec.param_bounds = b;
        }
        if let Some(g) = grid {
            if g.dim() != spec.action_grid.dim() {
                return Err(cfg_err(format!(
                    "simulator.action_grid entries have {} values, {} needs {}",
                    g.dim(),
                    spec.name,
                    spec.action_grid.dim()
                )));
            }
            spec.action_grid = g;
        }
        Ok(Arc::new(Overridden { inner: base, spec }))
    }

    pub fn environment_seed(&self) -> u64 {
        derive_seed(self.run.seed, &[tag::ENVIRONMENT])
    }

    pub fn build_environment(&self, sim: Arc<dyn Simulator>) -> Result<Box<dyn Environment>> {
        let seed = self.environment_seed();
        match (&self.target.hidden_theta, &self.target.command) {
            (Some(theta), _) => Ok(Box::new(SimulatedEnvironment::new(sim, theta.clone(), seed)?)),
            (None, Some(cmd)) => {
                let mut env = PluginEnvironment::launch(
                    cmd,
                    sim.spec().clone(),
                    seed,
                    Duration::from_secs_f64(self.simulator.startup_timeout_secs),
                )?;
                env.request_timeout = Duration::from_secs_f64(self.simulator.request_timeout_secs);
                Ok(Box::new(env))
            }
            (None, None) => Err(cfg_err("target needs exactly one of hidden_theta and command")),
        }
    }
}

/// A builtin simulator with a replaced parameter box or action grid.
struct Overridden {
    inner: Arc<dyn Simulator>,
    spec: SimulatorSpec,
}

impl Simulator for Overridden {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        self.inner.simulate(theta, action, seed)
    }

    fn noiseless(&self, theta: &[f64], action: &Action) -> Option<Observation> {
        self.inner.noiseless(theta, action)
    }

    fn obs_dim_for(&self, action: &Action) -> usize {
        self.inner.obs_dim_for(action)
    }

    fn distance(&self, a: &Observation, b: &Observation) -> f64 {
        self.inner.distance(a, b)
    }
}
