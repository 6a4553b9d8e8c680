use serde::{Deserialize, Serialize};

use super::{check_dims, Action, ActionGrid, Backend, Observation, Simulator, SimulatorSpec};
use crate::density::BoxPrior;
use crate::error::{contract, Result};
use crate::metrics::{DepthGrid, MeshCoverage};
use crate::seed::SplitMix64;

/// Constants of the analytic pouring surrogate.
///
/// `θ = (friction, rolling friction, restitution)` in `[0, 1]³`; actions are
/// `(h cm, p cm, v rad/s, δ)` where `δ` picks the summary statistic
/// (0 = the raw grid, 1 = mesh coverage). The deposit is a Gaussian mound on a
/// `size × size` grid covering `extent × extent` cm, centred at
/// `(0, p_scale · p)`, truncated below `support · peak` and normalized to unit
/// mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridDepositConfig {
    pub size: usize,
    pub extent: f64,
    pub p_scale: f64,
    pub sigma_base: f64,
    pub sigma_height: f64,
    pub sigma_speed: f64,
    pub sigma_restitution: f64,
    pub sigma_friction: f64,
    pub sigma_rolling: f64,
    pub sigma_floor: f64,
    /// Extra elongation along the pour axis per rad/s.
    pub stretch_speed: f64,
    pub support: f64,
    pub noise_std: f64,
    pub coverage: MeshCoverage,
}

impl Default for GridDepositConfig {
    fn default() -> Self {
        Self {
            size: 16,
            extent: 30.0,
            p_scale: 0.25,
            sigma_base: 1.5,
            sigma_height: 0.02,
            sigma_speed: 0.5,
            sigma_restitution: 3.0,
            sigma_friction: 1.0,
            sigma_rolling: 1.0,
            sigma_floor: 0.8,
            stretch_speed: 0.1,
            support: 1e-3,
            noise_std: 1e-3,
            coverage: MeshCoverage::default(),
        }
    }
}

impl GridDepositConfig {
    fn sigma(&self, theta: &[f64], h: f64, v: f64) -> f64 {
        (self.sigma_base + self.sigma_height * h + self.sigma_speed * v + self.sigma_restitution * theta[2]
            - self.sigma_friction * theta[0]
            - self.sigma_rolling * theta[1])
            .max(self.sigma_floor)
    }
}

#[derive(Debug, Clone)]
pub struct GridDeposit {
    pub config: GridDepositConfig,
    spec: SimulatorSpec,
}

impl Default for GridDeposit {
    fn default() -> Self {
        Self::new(GridDepositConfig::default())
    }
}

impl GridDeposit {
    pub fn new(config: GridDepositConfig) -> Self {
        let grid = ActionGrid::product(&[
            vec![20.0, 80.0, 140.0],
            vec![-30.0, 0.0, 30.0],
            vec![0.5, 2.0, 5.0],
            vec![0.0, 1.0],
        ])
        .expect("static grid");
        let obs_dim = (config.size * config.size).max(config.coverage.len());
        Self {
            spec: SimulatorSpec {
                name: "pouring".into(),
                param_dim: 3,
                param_bounds: BoxPrior::cube(3, 0.0, 1.0).expect("static bounds"),
                action_grid: grid,
                obs_dim,
                backend: Backend::BuiltinPouring,
            },
            config,
        }
    }

    /// The deposited height map before any summary, with pixel noise when
    /// `noise` is given.
    pub fn depth_grid(&self, theta: &[f64], action: &Action, noise: Option<&mut SplitMix64>) -> Result<DepthGrid> {
        check_dims(&self.spec, theta, action)?;
        let c = &self.config;
        let (h, p, v) = (action.values[0], action.values[1], action.values[2]);
        let sx = c.sigma(theta, h, v);
        let sy = sx * (1.0 + c.stretch_speed * v);
        let cy = c.p_scale * p;
        let n = c.size;
        let px = c.extent / n as f64;
        let mut values: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                let y = -0.5 * c.extent + (i as f64 + 0.5) * px;
                let x = -0.5 * c.extent + (j as f64 + 0.5) * px;
                (-0.5 * ((x / sx).powi(2) + ((y - cy) / sy).powi(2))).exp()
            })
            .collect();
        let peak = values.iter().copied().fold(0.0, f64::max);
        values.iter_mut().for_each(|v| {
            if *v < c.support * peak {
                *v = 0.0
            }
        });
        let total: f64 = values.iter().sum();
        if total <= 0.0 {
            return Err(contract("mound has no mass on the grid"));
        }
        values.iter_mut().for_each(|v| *v /= total);
        if let Some(rng) = noise {
            for v in values.iter_mut().filter(|v| **v > 0.0) {
                *v = (*v + c.noise_std * rng.next_normal()).max(0.0);
            }
        }
        DepthGrid::new(n, n, values)
    }

    fn summarize(&self, grid: DepthGrid, action: &Action) -> Result<Observation> {
        Ok(Observation::valid(if action.values[3] == 0.0 {
            grid.values
        } else {
            self.config.coverage.apply(&grid)?
        }))
    }
}

impl Simulator for GridDeposit {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        let g = self.depth_grid(theta, action, Some(&mut SplitMix64::new(seed)))?;
        self.summarize(g, action)
    }

    fn noiseless(&self, theta: &[f64], action: &Action) -> Option<Observation> {
        let g = self.depth_grid(theta, action, None).ok()?;
        self.summarize(g, action).ok()
    }

    fn obs_dim_for(&self, action: &Action) -> usize {
        if action.values[3] == 0.0 {
            self.config.size * self.config.size
        } else {
            self.config.coverage.len()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn second_moment(g: &DepthGrid) -> f64 {
        let n = g.rows;
        let total = g.total();
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                mx += g.get(i, j) * j as f64;
                my += g.get(i, j) * i as f64;
            }
        }
        mx /= total;
        my /= total;
        let mut m2 = 0.0;
        for i in 0..n {
            for j in 0..n {
                m2 += g.get(i, j) * ((j as f64 - mx).powi(2) + (i as f64 - my).powi(2));
            }
        }
        m2 / total
    }

    #[test]
    fn grid_has_54_actions() {
        assert_eq!(GridDeposit::default().spec().action_grid.len(), 54);
    }

    #[test]
    fn mass_is_conserved() {
        let sim = GridDeposit::default();
        for (s, a) in sim.spec().action_grid.iter().enumerate() {
            let g = sim.depth_grid(&[0.3, 0.6, 0.5], a, Some(&mut SplitMix64::new(s as u64))).unwrap();
            assert!((g.total() - 1.0).abs() <= 3.0 * 16.0 * 1e-3, "{}", g.total());
        }
    }

    #[test]
    fn restitution_spreads_the_mound() {
        let sim = GridDeposit::default();
        let a = sim.spec().action_grid.find(&[80.0, 0.0, 2.0, 0.0]).unwrap();
        let hi = sim.depth_grid(&[0.5, 0.5, 0.9], a, None).unwrap();
        let lo = sim.depth_grid(&[0.5, 0.5, 0.1], a, None).unwrap();
        assert!(second_moment(&hi) > second_moment(&lo));
    }

    #[test]
    fn summary_choice_sets_output_length() {
        let sim = GridDeposit::default();
        let raw = sim.spec().action_grid.find(&[20.0, 30.0, 0.5, 0.0]).unwrap();
        let cov = sim.spec().action_grid.find(&[20.0, 30.0, 0.5, 1.0]).unwrap();
        assert_eq!(sim.simulate(&[0.2, 0.2, 0.8], raw, 1).unwrap().values.len(), 256);
        let x = sim.simulate(&[0.2, 0.2, 0.8], cov, 1).unwrap();
        assert_eq!(x.values.len(), 36);
        assert_eq!(sim.obs_dim_for(cov), 36);
        assert!(x.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
