//! Stochastic simulators `p(x | θ, ξ)`, their action grids, and the target
//! environments that inference interacts with.
//!
//! Every simulator call takes an explicit `u64` seed and derives its noise
//! with the recipe documented in [`crate::seed`]; identical `(θ, ξ, seed)`
//! triples always produce identical observations.

mod box_collision;
mod env;
mod pouring;
mod toy;

pub use box_collision::{box_noiseless, box_simulate, BoxCollision, BoxSurrogate};
pub use env::{Environment, SimulatedEnvironment};
pub use pouring::{GridDeposit, GridDepositConfig};
pub use toy::{toy_noiseless, toy_simulate, ToySimulator};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::BoxPrior;
use crate::error::{contract, Result};

/// One entry of a discrete action grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub values: Vec<f64>,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct ActionGrid {
    actions: Vec<Action>,
}

impl TryFrom<Vec<Vec<f64>>> for ActionGrid {
    type Error = crate::Error;
    fn try_from(v: Vec<Vec<f64>>) -> Result<Self> {
        ActionGrid::new(v)
    }
}

impl From<ActionGrid> for Vec<Vec<f64>> {
    fn from(g: ActionGrid) -> Self {
        g.actions.into_iter().map(|a| a.values).collect()
    }
}

impl ActionGrid {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(contract("action grid is empty"));
        }
        let dim = values[0].len();
        if dim == 0 || values.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
            return Err(contract("action grid entries must be finite vectors of one length"));
        }
        for (i, a) in values.iter().enumerate() {
            if values[..i].contains(a) {
                return Err(contract(format!("duplicate action {a:?}")));
            }
        }
        Ok(Self {
            actions: values
                .into_iter()
                .enumerate()
                .map(|(index, values)| Action { values, index })
                .collect(),
        })
    }

    /// Scalar grid `lo, lo + step, ..., hi`.
    pub fn linspace(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let n = ((hi - lo) / step).round() as usize + 1;
        Self::new((0..n).map(|i| vec![lo + step * i as f64]).collect())
    }

    /// Cartesian product of per-coordinate levels, last coordinate fastest.
    pub fn product(levels: &[Vec<f64>]) -> Result<Self> {
        let mut out: Vec<Vec<f64>> = vec![vec![]];
        for lv in levels {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    lv.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        Self::new(out)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.actions[0].values.len()
    }

    pub fn get(&self, index: usize) -> Option<&Action> {
        self.actions.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.actions.iter()
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Grid entry with exactly these values.
    pub fn find(&self, values: &[f64]) -> Option<&Action> {
        self.actions.iter().find(|a| a.values == values)
    }

    /// Whether `action` is a grid entry (index and values agree).
    pub fn contains(&self, action: &Action) -> bool {
        self.get(action.index).is_some_and(|a| a.values == action.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub values: Vec<f64>,
    pub valid: bool,
}

impl Observation {
    pub fn valid(values: Vec<f64>) -> Self {
        Self { values, valid: true }
    }

    pub fn invalid(sentinel: Vec<f64>) -> Self {
        Self {
            values: sentinel,
            valid: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    BuiltinToy,
    BuiltinBox,
    BuiltinPouring,
    External { command: Vec<String> },
}

/// Declaration of a simulator's parameter box, action grid and observation size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub name: String,
    pub param_dim: usize,
    pub param_bounds: BoxPrior,
    pub action_grid: ActionGrid,
    /// Largest observation length; see [`Simulator::obs_dim_for`].
    pub obs_dim: usize,
    pub backend: Backend,
}

impl SimulatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.param_dim == 0 || self.obs_dim == 0 {
            return Err(contract("simulator dimensions must be positive"));
        }
        if self.param_bounds.dim() != self.param_dim {
            return Err(contract("parameter bounds do not match param_dim"));
        }
        Ok(())
    }
}

/// A forward model `p(x | θ, ξ)`.
pub trait Simulator: Send + Sync {
    fn spec(&self) -> &SimulatorSpec;

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation>;

    /// Simulates many requests; results keep request order.
    fn simulate_batch(&self, requests: &[(Vec<f64>, Action, u64)]) -> Vec<Result<Observation>> {
        requests
            .par_iter()
            .map(|(t, a, s)| self.simulate(t, a, *s))
            .collect()
    }

    /// Noise-free output, when the simulator has one.
    fn noiseless(&self, _theta: &[f64], _action: &Action) -> Option<Observation> {
        None
    }

    /// Observation length produced under `action`.
    fn obs_dim_for(&self, _action: &Action) -> usize {
        self.spec().obs_dim
    }

    /// Task distance between two observations (Euclidean by default).
    fn distance(&self, a: &Observation, b: &Observation) -> f64 {
        euclidean(&a.values, &b.values)
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub(crate) fn check_dims(spec: &SimulatorSpec, theta: &[f64], action: &Action) -> Result<()> {
    if theta.len() != spec.param_dim {
        return Err(contract(format!(
            "{} expects {} parameters, got {}",
            spec.name,
            spec.param_dim,
            theta.len()
        )));
    }
    if action.values.len() != spec.action_grid.dim() {
        return Err(contract(format!(
            "{} expects {}-dimensional actions, got {}",
            spec.name,
            spec.action_grid.dim(),
            action.values.len()
        )));
    }
    Ok(())
}

/// Builtin simulator for a backend tag.
pub fn builtin(backend: &Backend) -> Option<Box<dyn Simulator>> {
    match backend {
        Backend::BuiltinToy => Some(Box::new(ToySimulator::new())),
        Backend::BuiltinBox => Some(Box::new(BoxCollision::default())),
        Backend::BuiltinPouring => Some(Box::new(GridDeposit::default())),
        Backend::External { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_construction() {
        let g = ActionGrid::linspace(-5.0, 5.0, 0.5).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!(g.get(20).unwrap().values, vec![5.0]);
        assert_eq!(g.find(&[0.5]).unwrap().index, 11);
        assert!(ActionGrid::new(vec![vec![1.0], vec![1.0]]).is_err());
        assert!(ActionGrid::new(vec![]).is_err());
        let p = ActionGrid::product(&[vec![1.0, 2.0], vec![0.0, 1.0, 2.0]]).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.get(1).unwrap().values, vec![1.0, 1.0]);
    }

    #[test]
    fn membership_checks_index_and_values() {
        let g = ActionGrid::linspace(0.0, 2.0, 1.0).unwrap();
        assert!(g.contains(&Action { values: vec![1.0], index: 1 }));
        assert!(!g.contains(&Action { values: vec![1.0], index: 0 }));
        assert!(!g.contains(&Action { values: vec![7.0], index: 5 }));
    }

    #[test]
    fn builtins_are_reproducible() {
        for b in [Backend::BuiltinToy, Backend::BuiltinBox, Backend::BuiltinPouring] {
            let sim = builtin(&b).unwrap();
            let spec = sim.spec().clone();
            spec.validate().unwrap();
            let theta: Vec<f64> = spec
                .param_bounds
                .lower()
                .iter()
                .zip(spec.param_bounds.upper())
                .map(|(l, u)| 0.3 * l + 0.7 * u)
                .collect();
            for a in spec.action_grid.iter().step_by(5) {
                let x = sim.simulate(&theta, a, 99).unwrap();
                let y = sim.simulate(&theta, a, 99).unwrap();
                assert_eq!(x, y);
                assert_eq!(x.values.len(), sim.obs_dim_for(a));
                assert!(x.values.iter().all(|v| v.is_finite()));
            }
        }
    }
}
