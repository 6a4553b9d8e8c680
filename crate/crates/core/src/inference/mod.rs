//! The sequential estimation loop and its baselines.
//!
//! Each round draws a training set from the current prior, trains a network
//! (posterior estimator for ASBI/NSBI, surrogate likelihood for ALHI/NLHI),
//! picks an action (utility argmax or uniformly at random), executes it on the
//! environment and turns the observation into the next prior.

mod training;
mod utility;

pub use training::{
    fit_estimators, generate_training_set, nle_input, npe_input, observation_groups, train_nle, train_npe,
    EstimatorKind, Estimators, LossTrace, Simulation, TrainingSet,
};
pub use utility::{
    alhi_posterior, alhi_utility, likelihood_terms, posterior_terms, select_action, utility, AlhiPosterior,
    UtilityReport,
};

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{PriorDensity, TruncatedMog, DEFAULT_MAX_TRIES};
use crate::error::{contract, Error, Result};
use crate::mdn::{Activation, Covariance, TrainConfig};
use crate::seed::{derive_seed, rng_for, tag};
use crate::simulators::{Action, Environment, Observation, Simulator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Asbi,
    Nsbi,
    Alhi,
    Nlhi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Asbi => "asbi",
            Method::Nsbi => "nsbi",
            Method::Alhi => "alhi",
            Method::Nlhi => "nlhi",
        }
    }

    /// Whether the action is chosen by maximizing a utility.
    pub fn is_active(self) -> bool {
        matches!(self, Method::Asbi | Method::Alhi)
    }

    pub fn kind(self) -> EstimatorKind {
        match self {
            Method::Asbi | Method::Nsbi => EstimatorKind::Posterior,
            Method::Alhi | Method::Nlhi => EstimatorKind::Likelihood,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asbi" => Ok(Method::Asbi),
            "nsbi" => Ok(Method::Nsbi),
            "alhi" => Ok(Method::Alhi),
            "nlhi" => Ok(Method::Nlhi),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Where utility samples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilitySource {
    /// Training-set pairs at the action, topped up with fresh simulations.
    #[default]
    Training,
    Fresh,
}

/// How the posterior estimator's observation inputs are standardized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// Separate statistics for each grid action, then a global z-score.
    #[default]
    PerAction,
    /// One z-score over the whole training set.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    pub rounds: usize,
    pub sims_per_round: usize,
    pub utility_samples: usize,
    pub utility_repeats: usize,
    pub utility_source: UtilitySource,
    /// Mixture components of every network head.
    pub k: usize,
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub covariance: Covariance,
    pub input_scaling: InputScaling,
    /// Optimizer settings; `seed` is replaced by a per-round derived seed.
    pub train: TrainConfig,
    pub seed: u64,
    pub retrain_from_scratch: bool,
    /// Prior draws used to estimate `p(x | ξ)` in the likelihood-based utility.
    pub marginal_samples: usize,
    /// Prior draws importance-weighted by the surrogate likelihood.
    pub importance_samples: usize,
    /// Particles resampled before the KDE fit.
    pub posterior_particles: usize,
    pub max_tries: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Asbi,
            rounds: 4,
            sims_per_round: 5000,
            utility_samples: 1000,
            utility_repeats: 3,
            utility_source: UtilitySource::Training,
            k: 5,
            hidden_sizes: vec![128, 128],
            activation: Activation::Tanh,
            covariance: Covariance::Full,
            input_scaling: InputScaling::PerAction,
            train: TrainConfig::default(),
            seed: 0,
            retrain_from_scratch: true,
            marginal_samples: 100,
            importance_samples: 5000,
            posterior_particles: 1000,
            max_tries: DEFAULT_MAX_TRIES,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.rounds == 0 {
            return fail("rounds must be at least 1");
        }
        if self.sims_per_round < self.train.batch_size {
            return fail("sims_per_round must be at least train.batch_size");
        }
        if self.utility_samples == 0 || self.utility_repeats == 0 {
            return fail("utility_samples and utility_repeats must be at least 1");
        }
        if self.k == 0 || self.hidden_sizes.contains(&0) {
            return fail("k and hidden_sizes must be positive");
        }
        if self.marginal_samples == 0 || self.importance_samples == 0 || self.max_tries == 0 {
            return fail("marginal_samples, importance_samples and max_tries must be at least 1");
        }
        if self.posterior_particles < 100 {
            return fail("posterior_particles must be at least 100");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub simulations: usize,
    pub clamped: usize,
    pub acceptance_rate: f64,
}

/// Everything one round produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub training_seed: u64,
    pub training: TrainingSummary,
    pub loss_traces: Vec<LossTrace>,
    /// One report per grid action for active methods; empty otherwise.
    pub utilities: Vec<UtilityReport>,
    pub chosen_action: Action,
    pub observation: Observation,
    /// Prior of the next round.
    pub posterior: PriorDensity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effective_sample_size: Option<f64>,
}

/// The action/observation history `D_r` with per-round posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoundHistory {
    pub method: Method,
    pub seed: u64,
    pub initial_prior: PriorDensity,
    pub rounds: Vec<RoundRecord>,
}

impl RoundHistory {
    pub fn entries(&self) -> impl Iterator<Item = (usize, &Action, &Observation)> {
        self.rounds.iter().map(|r| (r.round, &r.chosen_action, &r.observation))
    }

    pub fn posteriors(&self) -> impl Iterator<Item = &PriorDensity> {
        self.rounds.iter().map(|r| &r.posterior)
    }

    /// Prior used by round `round` (1-based).
    pub fn prior_of(&self, round: usize) -> Option<&PriorDensity> {
        match round {
            0 => None,
            1 => Some(&self.initial_prior),
            r => self.rounds.get(r - 2).map(|x| &x.posterior),
        }
    }

    pub fn final_posterior(&self) -> &PriorDensity {
        self.rounds.last().map(|r| &r.posterior).unwrap_or(&self.initial_prior)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A finished or interrupted run.
#[derive(Debug)]
pub struct RunOutcome {
    /// Rounds completed before any error.
    pub history: RoundHistory,
    pub final_estimators: Option<Estimators>,
    pub error: Option<Error>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<RoundHistory> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.history),
        }
    }
}

/// Drives rounds of one method against one simulator.
pub struct Runner {
    sim: Arc<dyn Simulator>,
    cfg: RunConfig,
}

impl Runner {
    pub fn new(sim: Arc<dyn Simulator>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        sim.spec().validate()?;
        Ok(Self { sim, cfg })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn simulator(&self) -> &dyn Simulator {
        self.sim.as_ref()
    }

    /// Executes round `round` (1-based) starting from `prior`.
    pub fn round(
        &self,
        env: &mut dyn Environment,
        prior: &PriorDensity,
        round: usize,
        warm: Option<&Estimators>,
    ) -> Result<(RoundRecord, Estimators)> {
        let cfg = &self.cfg;
        let sim = self.sim.as_ref();
        let r = round as u64;
        let training_seed = derive_seed(cfg.seed, &[tag::TRAINING_SET, r]);
        let set = generate_training_set(sim, prior, cfg.sims_per_round, training_seed, cfg.max_tries)?;
        let warm = if cfg.retrain_from_scratch { None } else { warm };
        let (est, loss_traces) = fit_estimators(
            cfg.method.kind(),
            sim,
            &set,
            cfg,
            derive_seed(cfg.seed, &[tag::TRAIN, r]),
            prior.bounds(),
            warm,
        )?;

        let grid = &sim.spec().action_grid;
        let (utilities, chosen) = if cfg.method.is_active() {
            let reports: Vec<UtilityReport> = grid
                .actions()
                .par_iter()
                .map(|a| self.action_utility(&est, &set, prior, a, r))
                .collect::<Result<_>>()?;
            let chosen = select_action(&reports)?;
            (reports, chosen)
        } else {
            let mut rng = rng_for(cfg.seed, &[tag::ACTION, r]);
            (Vec::new(), grid.actions()[rng.random_range(0..grid.len())].clone())
        };

        let observation = env.observe(&chosen)?;
        if observation.values.len() != sim.obs_dim_for(&chosen) {
            return Err(Error::Environment(format!(
                "observation has {} values, expected {}",
                observation.values.len(),
                sim.obs_dim_for(&chosen)
            )));
        }

        let post_seed = derive_seed(cfg.seed, &[tag::POSTERIOR, r]);
        let net = est.for_action(sim, &chosen)?;
        let (posterior, effective_sample_size) = match cfg.method.kind() {
            EstimatorKind::Posterior => {
                let mog = net.forward(&npe_input(&observation.values, &chosen.values))?;
                let t = TruncatedMog::new(mog, prior.bounds().clone(), &mut rng_for(post_seed, &[]))?;
                (PriorDensity::from(t), None)
            }
            EstimatorKind::Likelihood => {
                let p = alhi_posterior(
                    net,
                    prior,
                    &observation,
                    &chosen,
                    cfg.importance_samples,
                    cfg.posterior_particles,
                    post_seed,
                    cfg.max_tries,
                )?;
                (p.posterior, Some(p.effective_sample_size))
            }
        };

        let record = RoundRecord {
            round,
            training_seed,
            training: TrainingSummary {
                simulations: set.samples.len(),
                clamped: set.clamped,
                acceptance_rate: set.acceptance_rate,
            },
            loss_traces,
            utilities,
            chosen_action: chosen,
            observation,
            posterior,
            effective_sample_size,
        };
        Ok((record, est))
    }

    fn action_utility(
        &self,
        est: &Estimators,
        set: &TrainingSet,
        prior: &PriorDensity,
        action: &Action,
        round: u64,
    ) -> Result<UtilityReport> {
        let cfg = &self.cfg;
        let sim = self.sim.as_ref();
        let seed = derive_seed(cfg.seed, &[tag::UTILITY, round, action.index as u64]);
        let pool = match cfg.utility_source {
            UtilitySource::Training => set.pool(action.index),
            UtilitySource::Fresh => Vec::new(),
        };
        let net = est.for_action(sim, action)?;
        match cfg.method {
            Method::Asbi => utility(
                net,
                sim,
                prior,
                action,
                cfg.utility_samples,
                cfg.utility_repeats,
                seed,
                &pool,
                cfg.max_tries,
            ),
            Method::Alhi => alhi_utility(
                net,
                sim,
                prior,
                action,
                cfg.utility_samples,
                cfg.utility_repeats,
                cfg.marginal_samples,
                seed,
                &pool,
                cfg.max_tries,
            ),
            _ => Err(contract("utility requested for a random-action method")),
        }
    }

    /// Runs all rounds, keeping whatever completed if a round fails.
    pub fn run(&self, env: &mut dyn Environment, initial_prior: PriorDensity) -> RunOutcome {
        let mut history = RoundHistory {
            method: self.cfg.method,
            seed: self.cfg.seed,
            initial_prior,
            rounds: Vec::with_capacity(self.cfg.rounds),
        };
        if env.spec().action_grid != self.sim.spec().action_grid || env.spec().param_dim != self.sim.spec().param_dim {
            return RunOutcome {
                history,
                final_estimators: None,
                error: Some(contract("environment and simulator declare different spaces")),
            };
        }
        let mut estimators: Option<Estimators> = None;
        for round in 1..=self.cfg.rounds {
            let prior = history.final_posterior().clone();
            match self.round(env, &prior, round, estimators.as_ref()) {
                Ok((rec, est)) => {
                    log::info!(
                        "{} round {round}: action {:?}",
                        self.cfg.method.name(),
                        rec.chosen_action.values
                    );
                    history.rounds.push(rec);
                    estimators = Some(est);
                }
                Err(e) => {
                    return RunOutcome {
                        history,
                        final_estimators: estimators,
                        error: Some(e.in_round(round)),
                    }
                }
            }
        }
        RunOutcome {
            history,
            final_estimators: estimators,
            error: None,
        }
    }
}

fn run_method(method: Method, sim: Arc<dyn Simulator>, env: &mut dyn Environment, cfg: &RunConfig) -> Result<RoundHistory> {
    if cfg.method != method {
        return Err(contract(format!(
            "config selects {} but {} was requested",
            cfg.method.name(),
            method.name()
        )));
    }
    let prior = PriorDensity::Box(sim.spec().param_bounds.clone());
    Runner::new(sim, cfg.clone())?.run(env, prior).into_result()
}

/// Active simulation-based inference from the simulator's uniform prior.
pub fn run_asbi(sim: Arc<dyn Simulator>, env: &mut dyn Environment, cfg: &RunConfig) -> Result<RoundHistory> {
    run_method(Method::Asbi, sim, env, cfg)
}

/// Sequential posterior estimation with uniformly random actions.
pub fn run_nsbi(sim: Arc<dyn Simulator>, env: &mut dyn Environment, cfg: &RunConfig) -> Result<RoundHistory> {
    run_method(Method::Nsbi, sim, env, cfg)
}

/// Active inference through a surrogate likelihood and KDE posteriors.
pub fn run_alhi(sim: Arc<dyn Simulator>, env: &mut dyn Environment, cfg: &RunConfig) -> Result<RoundHistory> {
    run_method(Method::Alhi, sim, env, cfg)
}

/// Surrogate-likelihood inference with uniformly random actions.
pub fn run_nlhi(sim: Arc<dyn Simulator>, env: &mut dyn Environment, cfg: &RunConfig) -> Result<RoundHistory> {
    run_method(Method::Nlhi, sim, env, cfg)
}
