use super::{check_dims, Action, ActionGrid, Backend, Observation, Simulator, SimulatorSpec};
use crate::density::BoxPrior;
use crate::error::Result;
use crate::seed::SplitMix64;

/// Noise-free toy response `θ₁·exp(3 − ξ) + θ₂·ξ`.
pub fn toy_noiseless(theta: &[f64], xi: f64) -> f64 {
    theta[0] * (3.0 - xi).exp() + theta[1] * xi
}

/// Toy response plus one standard-normal draw from `noise`.
pub fn toy_simulate(theta: &[f64], xi: f64, noise: &mut SplitMix64) -> f64 {
    toy_noiseless(theta, xi) + noise.next_normal()
}

/// Two parameters in `[−5, 5]²`, scalar action on `{−5.0, −4.5, …, 5.0}`,
/// scalar observation.
#[derive(Debug, Clone)]
pub struct ToySimulator {
    spec: SimulatorSpec,
}

impl ToySimulator {
    pub fn new() -> Self {
        Self {
            spec: SimulatorSpec {
                name: "toy".into(),
                param_dim: 2,
                param_bounds: BoxPrior::cube(2, -5.0, 5.0).expect("static bounds"),
                action_grid: ActionGrid::linspace(-5.0, 5.0, 0.5).expect("static grid"),
                obs_dim: 1,
                backend: Backend::BuiltinToy,
            },
        }
    }

    /// Same model on a custom action grid.
    pub fn with_grid(grid: ActionGrid) -> Self {
        let mut s = Self::new();
        s.spec.action_grid = grid;
        s
    }
}

impl Default for ToySimulator {
    fn default() -> Self {
        Self::new()
    }
}

impl Simulator for ToySimulator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        check_dims(&self.spec, theta, action)?;
        let mut noise = SplitMix64::new(seed);
        Ok(Observation::valid(vec![toy_simulate(theta, action.values[0], &mut noise)]))
    }

    fn noiseless(&self, theta: &[f64], action: &Action) -> Option<Observation> {
        Some(Observation::valid(vec![toy_noiseless(theta, action.values[0])]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_values() {
        assert_eq!(toy_noiseless(&[-3.0, 1.0], 3.0), 0.0);
        assert!((toy_noiseless(&[-3.0, 1.0], 0.0) - (-3.0 * 3f64.exp())).abs() < 1e-12);
        assert!((toy_noiseless(&[-3.0, 1.0], 0.0) - (-60.2566)).abs() < 1e-4);
        assert!((toy_noiseless(&[-3.0, 1.0], 5.0) - 4.59399).abs() < 1e-5);
        assert_eq!(toy_noiseless(&[1.0, 0.0], 3.0), 1.0);
    }

    #[test]
    fn pure_noise_moments() {
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|i| toy_simulate(&[0.0, 0.0], 1.5, &mut SplitMix64::new(i)))
            .collect();
        let m = crate::math::mean(&xs);
        let v = crate::math::std_dev(&xs).powi(2);
        assert!(m.abs() < 0.02, "{m}");
        assert!((v - 1.0).abs() < 0.05, "{v}");
    }

    #[test]
    fn noiseless_is_the_monte_carlo_mean() {
        let sim = ToySimulator::new();
        let a = sim.spec().action_grid.find(&[1.0]).unwrap().clone();
        let theta = [-3.0, 1.0];
        let n = 1_000_000u64;
        let mean = (0..n).map(|s| sim.simulate(&theta, &a, s).unwrap().values[0]).sum::<f64>() / n as f64;
        assert!((mean - toy_noiseless(&theta, 1.0)).abs() < 0.01);
    }
}
