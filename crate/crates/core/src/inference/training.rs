use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{truncated_sample, PriorDensity};
use crate::error::{Error, Result};
use crate::mdn::{train, MdnArchitecture, MdnParams, PosteriorEstimator, TargetScaling};
use crate::seed::{derive_seed, rng_for, tag};
use crate::simulators::{Action, Observation, Simulator};

use super::RunConfig;

/// One forward simulation and the seed that produced its noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub theta: Vec<f64>,
    pub action: usize,
    pub observation: Observation,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub samples: Vec<Simulation>,
    /// Parameter draws clamped onto the box after exhausting rejection tries.
    pub clamped: usize,
    pub acceptance_rate: f64,
}

impl TrainingSet {
    /// `(θ, x)` pairs simulated at grid action `index`.
    pub fn pool(&self, index: usize) -> Vec<(&[f64], &Observation)> {
        self.samples
            .iter()
            .filter(|s| s.action == index)
            .map(|s| (s.theta.as_slice(), &s.observation))
            .collect()
    }
}

/// Draws `n` triples: a uniformly random grid action, `θ` from the prior,
/// and a simulation at a seed derived from `(seed, n)`.
pub fn generate_training_set(
    sim: &dyn Simulator,
    prior: &PriorDensity,
    n: usize,
    seed: u64,
    max_tries: usize,
) -> Result<TrainingSet> {
    let grid = &sim.spec().action_grid;
    let mut rng = rng_for(seed, &[0]);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..grid.len())).collect();
    let draws = truncated_sample(prior, &mut rng, n, max_tries);
    let requests: Vec<(Vec<f64>, Action, u64)> = draws
        .samples
        .iter()
        .zip(&actions)
        .enumerate()
        .map(|(i, (t, a))| (t.clone(), grid.actions()[*a].clone(), derive_seed(seed, &[1, i as u64])))
        .collect();
    let observations = sim.simulate_batch(&requests);
    let mut samples = Vec::with_capacity(n);
    for ((theta, action, s), x) in requests.into_iter().zip(observations) {
        let observation = x.map_err(|e| Error::Simulator(format!("training simulation failed: {e}")))?;
        samples.push(Simulation {
            theta,
            action: action.index,
            observation,
            seed: s,
        });
    }
    Ok(TrainingSet {
        acceptance_rate: draws.acceptance_rate(),
        clamped: draws.clamped,
        samples,
    })
}

/// Network input `x ⊕ ξ` of the posterior estimator.
pub fn npe_input(observation: &[f64], action: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(observation.len() + action.len());
    v.extend_from_slice(observation);
    v.extend_from_slice(action);
    v
}

/// Network input `θ ⊕ ξ` of the surrogate likelihood.
pub fn nle_input(theta: &[f64], action: &[f64]) -> Vec<f64> {
    npe_input(theta, action)
}

/// Grid action indices grouped by observation length. Each group gets its
/// own network.
pub fn observation_groups(sim: &dyn Simulator) -> BTreeMap<usize, Vec<usize>> {
    let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for a in sim.spec().action_grid.iter() {
        g.entry(sim.obs_dim_for(a)).or_default().push(a.index);
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// `q(θ | x, ξ)`.
    Posterior,
    /// `q(x | θ, ξ)`.
    Likelihood,
}

/// One trained network per observation group.
#[derive(Debug, Clone)]
pub struct Estimators {
    pub kind: EstimatorKind,
    pub by_obs_dim: BTreeMap<usize, PosteriorEstimator>,
}

impl Estimators {
    pub fn for_action(&self, sim: &dyn Simulator, action: &Action) -> Result<&PosteriorEstimator> {
        let d = sim.obs_dim_for(action);
        self.by_obs_dim
            .get(&d)
            .ok_or_else(|| crate::error::contract(format!("no estimator for observation length {d}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub obs_dim: usize,
    pub trace: Vec<f64>,
}

/// Trains one network per observation group on `set`.
pub fn fit_estimators(
    kind: EstimatorKind,
    sim: &dyn Simulator,
    set: &TrainingSet,
    cfg: &RunConfig,
    seed: u64,
    bounds: &crate::density::BoxPrior,
    warm: Option<&Estimators>,
) -> Result<(Estimators, Vec<LossTrace>)> {
    let grid = &sim.spec().action_grid;
    let d_theta = sim.spec().param_dim;
    let d_xi = grid.dim();
    let mut by_obs_dim = BTreeMap::new();
    let mut traces = Vec::new();
    for (obs_dim, members) in observation_groups(sim) {
        let data: Vec<(Vec<f64>, Vec<f64>)> = set
            .samples
            .iter()
            .filter(|s| members.binary_search(&s.action).is_ok())
            .map(|s| {
                let xi = &grid.actions()[s.action].values;
                match kind {
                    EstimatorKind::Posterior => (s.theta.clone(), npe_input(&s.observation.values, xi)),
                    EstimatorKind::Likelihood => (s.observation.values.clone(), nle_input(&s.theta, xi)),
                }
            })
            .collect();
        let (input_dim, output_dim) = match kind {
            EstimatorKind::Posterior => (obs_dim + d_xi, d_theta),
            EstimatorKind::Likelihood => (d_theta + d_xi, obs_dim),
        };
        let covariance = if output_dim > 16 {
            crate::mdn::Covariance::Diagonal
        } else {
            cfg.covariance
        };
        let arch = MdnArchitecture::new(input_dim, output_dim, cfg.hidden_sizes.clone(), cfg.k)?
            .with_activation(cfg.activation)
            .with_covariance(covariance);
        let mut tc = cfg.train.clone();
        tc.seed = derive_seed(seed, &[obs_dim as u64]);
        tc.actionwise_inputs = None;
        let target_bounds = match kind {
            EstimatorKind::Posterior => {
                if cfg.input_scaling == super::InputScaling::PerAction {
                    tc.actionwise_inputs = Some(d_xi);
                }
                Some(bounds)
            }
            EstimatorKind::Likelihood => {
                tc.target_scaling = TargetScaling::Data;
                None
            }
        };
        let warm_params: Option<&MdnParams> = warm
            .filter(|w| w.kind == kind)
            .and_then(|w| w.by_obs_dim.get(&obs_dim))
            .map(|e| &e.params);
        let out = train(&arch, &data, &tc, target_bounds, warm_params)?;
        traces.push(LossTrace {
            obs_dim,
            trace: out.loss_trace,
        });
        by_obs_dim.insert(obs_dim, out.estimator);
    }
    Ok((Estimators { kind, by_obs_dim }, traces))
}

/// Trains the surrogate likelihood `q(x | θ, ξ)` on `n` fresh simulations.
pub fn train_nle(
    sim: &dyn Simulator,
    prior: &PriorDensity,
    n: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Estimators, Vec<LossTrace>)> {
    let set = generate_training_set(sim, prior, n, derive_seed(seed, &[tag::TRAINING_SET]), cfg.max_tries)?;
    fit_estimators(
        EstimatorKind::Likelihood,
        sim,
        &set,
        cfg,
        derive_seed(seed, &[tag::TRAIN]),
        prior.bounds(),
        None,
    )
}

/// Trains the action-conditioned posterior estimator on `n` fresh simulations.
pub fn train_npe(
    sim: &dyn Simulator,
    prior: &PriorDensity,
    n: usize,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Estimators, Vec<LossTrace>, TrainingSet)> {
    let set = generate_training_set(sim, prior, n, derive_seed(seed, &[tag::TRAINING_SET]), cfg.max_tries)?;
    let (e, t) = fit_estimators(
        EstimatorKind::Posterior,
        sim,
        &set,
        cfg,
        derive_seed(seed, &[tag::TRAIN]),
        prior.bounds(),
        None,
    )?;
    Ok((e, t, set))
}
