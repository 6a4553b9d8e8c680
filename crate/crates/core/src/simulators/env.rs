use std::sync::Arc;

use super::{Action, Observation, Simulator, SimulatorSpec};
use crate::error::{contract, Error, Result};
use crate::seed::derive_seed;

/// The system whose parameters are being estimated, `p̄(x | ξ)`.
///
/// Inference only ever sees observations; nothing in this interface exposes
/// the parameters that generate them.
pub trait Environment: Send {
    fn spec(&self) -> &SimulatorSpec;

    /// Executes `action` once and returns what was observed.
    fn observe(&mut self, action: &Action) -> Result<Observation>;
}

/// A simulator run at hidden parameters (sim-to-sim evaluation).
pub struct SimulatedEnvironment {
    sim: Arc<dyn Simulator>,
    hidden: Vec<f64>,
    seed: u64,
    calls: u64,
}

impl SimulatedEnvironment {
    pub fn new(sim: Arc<dyn Simulator>, hidden_theta: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = sim.spec();
        if hidden_theta.len() != spec.param_dim || !spec.param_bounds.contains(&hidden_theta) {
            return Err(contract(format!(
                "hidden parameters {hidden_theta:?} lie outside the {} parameter box",
                spec.name
            )));
        }
        Ok(Self {
            sim,
            hidden: hidden_theta,
            seed,
            calls: 0,
        })
    }
}

impl std::fmt::Debug for SimulatedEnvironment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatedEnvironment")
            .field("simulator", &self.sim.spec().name)
            .field("calls", &self.calls)
            .finish_non_exhaustive()
    }
}

impl Environment for SimulatedEnvironment {
    fn spec(&self) -> &SimulatorSpec {
        self.sim.spec()
    }

    fn observe(&mut self, action: &Action) -> Result<Observation> {
        if !self.spec().action_grid.contains(action) {
            return Err(contract(format!("action {:?} is not on the grid", action.values)));
        }
        let seed = derive_seed(self.seed, &[self.calls]);
        self.calls += 1;
        self.sim.simulate(&self.hidden, action, seed).map_err(|e| match e {
            e @ Error::Contract(_) => e,
            e => Error::Environment(e.to_string()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulators::{BoxCollision, ToySimulator};

    #[test]
    fn fresh_noise_per_call() {
        let mut env = SimulatedEnvironment::new(Arc::new(ToySimulator::new()), vec![-3.0, 1.0], 7).unwrap();
        let a = env.spec().action_grid.find(&[3.0]).unwrap().clone();
        let x = env.observe(&a).unwrap();
        let y = env.observe(&a).unwrap();
        assert_ne!(x, y);
        assert!(x.values[0].abs() < 5.0 && y.values[0].abs() < 5.0);
    }

    #[test]
    fn heavy_rough_box_is_valid_at_three() {
        let mut env = SimulatedEnvironment::new(Arc::new(BoxCollision::default()), vec![0.8; 3], 1).unwrap();
        let a = env.spec().action_grid.find(&[3.0]).unwrap().clone();
        assert!(env.observe(&a).unwrap().valid);
    }

    #[test]
    fn off_grid_action_and_bad_theta_are_rejected() {
        let mut env = SimulatedEnvironment::new(Arc::new(ToySimulator::new()), vec![-3.0, 1.0], 7).unwrap();
        let bad = Action {
            values: vec![0.25],
            index: 0,
        };
        assert!(matches!(env.observe(&bad), Err(Error::Contract(_))));
        assert!(SimulatedEnvironment::new(Arc::new(ToySimulator::new()), vec![-6.0, 1.0], 7).is_err());
    }
}
