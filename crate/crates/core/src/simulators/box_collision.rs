use serde::{Deserialize, Serialize};

use super::{check_dims, euclidean, Action, ActionGrid, Backend, Observation, Simulator, SimulatorSpec};
use crate::density::BoxPrior;
use crate::error::Result;
use crate::seed::SplitMix64;

/// Constants of the analytic box-collision surrogate: an impulsive collision
/// with restitution followed by Coulomb sliding.
///
/// `θ = (table friction, cube friction, cube density)`, each in `[0, 1]`;
/// the action is the pusher's initial speed in m/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSurrogate {
    pub pusher_mass: f64,
    /// Mass of the impacted cube at unit density (15 cm cube, kg).
    pub cube_mass_scale: f64,
    pub density_floor: f64,
    pub restitution: f64,
    pub friction_scale: f64,
    pub friction_floor: f64,
    pub gravity: f64,
    pub start: [f64; 3],
    pub table_edge: f64,
    pub noise_std: f64,
}

impl Default for BoxSurrogate {
    fn default() -> Self {
        Self {
            pusher_mass: 1.0,
            cube_mass_scale: 3.375,
            density_floor: 0.05,
            restitution: 0.5,
            friction_scale: 0.5,
            friction_floor: 0.02,
            gravity: 9.81,
            start: [0.30, 0.0, 0.075],
            table_edge: 1.2,
            noise_std: 0.005,
        }
    }
}

pub const INVALID_POSITION: [f64; 3] = [-1.0, -1.0, -1.0];

impl BoxSurrogate {
    pub fn cube_mass(&self, theta: &[f64]) -> f64 {
        self.cube_mass_scale * (theta[2] + self.density_floor)
    }

    /// Impacted-cube speed just after the collision.
    pub fn post_impact_speed(&self, theta: &[f64], speed: f64) -> f64 {
        (1.0 + self.restitution) * self.pusher_mass * speed / (self.pusher_mass + self.cube_mass(theta))
    }

    pub fn friction(&self, theta: &[f64]) -> f64 {
        self.friction_scale * (theta[0] + theta[1]) + self.friction_floor
    }

    pub fn slide_distance(&self, theta: &[f64], speed: f64) -> f64 {
        let v = self.post_impact_speed(theta, speed);
        v * v / (2.0 * self.friction(theta) * self.gravity)
    }
}

/// Noise-free resting position, or `None` when the cube leaves the table.
pub fn box_noiseless(c: &BoxSurrogate, theta: &[f64], speed: f64) -> Option<[f64; 3]> {
    let x = c.start[0] + c.slide_distance(theta, speed);
    (x <= c.table_edge).then_some([x, c.start[1], c.start[2]])
}

/// Resting position with Gaussian noise on the two horizontal coordinates;
/// `(−1, −1, −1)` when the cube falls off the table.
pub fn box_simulate(c: &BoxSurrogate, theta: &[f64], speed: f64, noise: &mut SplitMix64) -> Observation {
    match box_noiseless(c, theta, speed) {
        None => Observation::invalid(INVALID_POSITION.to_vec()),
        Some([x, y, z]) => {
            let nx = noise.next_normal();
            let ny = noise.next_normal();
            Observation::valid(vec![x + c.noise_std * nx, y + c.noise_std * ny, z])
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoxCollision {
    pub constants: BoxSurrogate,
    spec: SimulatorSpec,
}

impl BoxCollision {
    pub fn new(constants: BoxSurrogate) -> Self {
        Self {
            constants,
            spec: SimulatorSpec {
                name: "box".into(),
                param_dim: 3,
                param_bounds: BoxPrior::cube(3, 0.0, 1.0).expect("static bounds"),
                action_grid: ActionGrid::linspace(0.0, 20.0, 0.5).expect("static grid"),
                obs_dim: 3,
                backend: Backend::BuiltinBox,
            },
        }
    }
}

impl Default for BoxCollision {
    fn default() -> Self {
        Self::new(BoxSurrogate::default())
    }
}

impl Simulator for BoxCollision {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        check_dims(&self.spec, theta, action)?;
        Ok(box_simulate(&self.constants, theta, action.values[0], &mut SplitMix64::new(seed)))
    }

    fn noiseless(&self, theta: &[f64], action: &Action) -> Option<Observation> {
        Some(match box_noiseless(&self.constants, theta, action.values[0]) {
            Some(p) => Observation::valid(p.to_vec()),
            None => Observation::invalid(INVALID_POSITION.to_vec()),
        })
    }

    /// Euclidean between on-table positions; zero when both left the table;
    /// otherwise the on-table position's distance to the table edge.
    fn distance(&self, a: &Observation, b: &Observation) -> f64 {
        match (a.valid, b.valid) {
            (true, true) => euclidean(&a.values, &b.values),
            (false, false) => 0.0,
            (true, false) => (self.constants.table_edge - a.values[0]).abs(),
            (false, true) => (self.constants.table_edge - b.values[0]).abs(),
        }
    }
}
