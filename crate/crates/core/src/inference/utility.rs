use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::density::{kde_fit, truncated_log_pdf, truncated_sample, PriorDensity, TruncatedMog};
use crate::error::{contract, Error, Result};
use crate::math::{log_sum_exp, mean};
use crate::mdn::PosteriorEstimator;
use crate::seed::{derive_seed, rng_for, RngState};
use crate::simulators::{Action, Observation, Simulator};

use super::training::{nle_input, npe_input};

/// Information-gain estimate for one action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub action: Action,
    pub u_mean: f64,
    pub u_per_repeat: Vec<f64>,
    /// Terms dropped because a log-density was `−∞` or not finite.
    pub skipped_terms: usize,
    pub usable: bool,
}

impl UtilityReport {
    fn from_repeats(action: &Action, per_repeat: Vec<(f64, usize)>, total_terms: usize) -> Self {
        let skipped_terms: usize = per_repeat.iter().map(|(_, s)| s).sum();
        let u_per_repeat: Vec<f64> = per_repeat.into_iter().map(|(u, _)| u).collect();
        let usable = 2 * skipped_terms < total_terms;
        if !usable {
            log::warn!(
                "action {:?} unusable: {} of {} utility terms skipped",
                action.values,
                skipped_terms,
                total_terms
            );
        }
        Self {
            action: action.clone(),
            u_mean: mean(&u_per_repeat),
            u_per_repeat,
            skipped_terms,
            usable,
        }
    }
}

/// Mean of the finite terms and the number skipped.
fn summarize(terms: &[f64]) -> (f64, usize) {
    let kept: Vec<f64> = terms.iter().copied().filter(|t| t.is_finite()).collect();
    let skipped = terms.len() - kept.len();
    (if kept.is_empty() { 0.0 } else { mean(&kept) }, skipped)
}

/// `m` `(θ, x)` pairs at `action`: up to `m` distinct entries of `pool`, then
/// fresh prior draws simulated at seeds derived from `seed`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn draw_pairs(
    sim: &dyn Simulator,
    prior: &PriorDensity,
    action: &Action,
    m: usize,
    pool: &[(&[f64], &Observation)],
    rng: &mut RngState,
    seed: u64,
    max_tries: usize,
) -> Result<Vec<(Vec<f64>, Observation)>> {
    let take = m.min(pool.len());
    let mut pairs: Vec<(Vec<f64>, Observation)> = index::sample(rng, pool.len(), take)
        .into_iter()
        .map(|i| (pool[i].0.to_vec(), pool[i].1.clone()))
        .collect();
    let fresh = m - take;
    if fresh > 0 {
        let thetas = truncated_sample(prior, rng, fresh, max_tries).samples;
        let requests: Vec<(Vec<f64>, Action, u64)> = thetas
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, action.clone(), derive_seed(seed, &[i as u64])))
            .collect();
        for ((t, _, _), x) in requests.iter().zip(sim.simulate_batch(&requests)) {
            let x = x.map_err(|e| Error::Simulator(format!("utility simulation failed: {e}")))?;
            pairs.push((t.clone(), x));
        }
    }
    Ok(pairs)
}

/// Per-pair terms `log q(θ_i | x_i, ξ) − log p(θ_i)`.
pub fn posterior_terms(
    est: &PosteriorEstimator,
    prior: &PriorDensity,
    action: &[f64],
    pairs: &[(Vec<f64>, Observation)],
) -> Result<Vec<f64>> {
    let inputs: Vec<Vec<f64>> = pairs.iter().map(|(_, x)| npe_input(&x.values, action)).collect();
    let inputs_r: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let thetas: Vec<&[f64]> = pairs.iter().map(|(t, _)| t.as_slice()).collect();
    let lq = match est.log_prob_batch(&thetas, &inputs_r) {
        Ok(v) => v,
        Err(Error::Divergence { .. }) => vec![f64::NAN; pairs.len()],
        Err(e) => return Err(e),
    };
    Ok(lq
        .into_iter()
        .zip(&thetas)
        .map(|(q, t)| {
            let p = truncated_log_pdf(prior, t);
            if q.is_finite() && p.is_finite() {
                q - p
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Monte-Carlo information gain of `action` under the posterior estimator,
/// averaged over `repeats` independent `m`-sample estimates.
#[allow(clippy::too_many_arguments)]
pub fn utility(
    est: &PosteriorEstimator,
    sim: &dyn Simulator,
    prior: &PriorDensity,
    action: &Action,
    m: usize,
    repeats: usize,
    seed: u64,
    pool: &[(&[f64], &Observation)],
    max_tries: usize,
) -> Result<UtilityReport> {
    if m == 0 || repeats == 0 {
        return Err(contract("utility needs m >= 1 and repeats >= 1"));
    }
    let mut per_repeat = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = rng_for(seed, &[r as u64, 0]);
        let pairs = draw_pairs(sim, prior, action, m, pool, &mut rng, derive_seed(seed, &[r as u64, 1]), max_tries)?;
        per_repeat.push(summarize(&posterior_terms(est, prior, &action.values, &pairs)?));
    }
    Ok(UtilityReport::from_repeats(action, per_repeat, m * repeats))
}

/// Usable action with the largest mean utility; ties go to the lowest index.
pub fn select_action(reports: &[UtilityReport]) -> Result<Action> {
    let mut best: Option<&UtilityReport> = None;
    for r in reports.iter().filter(|r| r.usable) {
        match best {
            Some(b) if r.u_mean < b.u_mean || (r.u_mean == b.u_mean && r.action.index >= b.action.index) => {}
            _ => best = Some(r),
        }
    }
    best.map(|r| r.action.clone())
        .ok_or_else(|| Error::NoUsableAction(format!("all {} candidate actions were unusable", reports.len())))
}

/// Per-pair terms `log q(x_i | θ_i, ξ) − log((1/n) Σ_j q(x_i | θ_j, ξ))` with
/// the marginal set `θ_j` shared across pairs.
pub fn likelihood_terms(
    nle: &PosteriorEstimator,
    action: &[f64],
    pairs: &[(Vec<f64>, Observation)],
    marginal: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if marginal.is_empty() {
        return Err(contract("marginal sample set is empty"));
    }
    let inputs: Vec<Vec<f64>> = pairs.iter().map(|(t, _)| nle_input(t, action)).collect();
    let inputs_r: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let xs: Vec<&[f64]> = pairs.iter().map(|(_, x)| x.values.as_slice()).collect();
    let minputs: Vec<Vec<f64>> = marginal.iter().map(|t| nle_input(t, action)).collect();
    let minputs_r: Vec<&[f64]> = minputs.iter().map(|v| v.as_slice()).collect();
    let (lq, mogs) = match (nle.log_prob_batch(&xs, &inputs_r), nle.forward_batch(&minputs_r)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e @ Error::Contract(_)), _) | (_, Err(e @ Error::Contract(_))) => return Err(e),
        _ => return Ok(vec![f64::NAN; pairs.len()]),
    };
    let ln_n = (marginal.len() as f64).ln();
    let mut buf = vec![0.0; mogs.len()];
    Ok(lq
        .into_iter()
        .zip(&xs)
        .map(|(q, x)| {
            for (b, m) in buf.iter_mut().zip(&mogs) {
                *b = m.log_pdf(x).unwrap_or(f64::NAN);
            }
            let lm = log_sum_exp(&buf) - ln_n;
            if q.is_finite() && lm.is_finite() {
                q - lm
            } else {
                f64::NAN
            }
        })
        .collect())
}

/// Information gain of `action` estimated with the surrogate likelihood and a
/// `marginal_n`-sample estimate of `p(x | ξ)`.
#[allow(clippy::too_many_arguments)]
pub fn alhi_utility(
    nle: &PosteriorEstimator,
    sim: &dyn Simulator,
    prior: &PriorDensity,
    action: &Action,
    m: usize,
    repeats: usize,
    marginal_n: usize,
    seed: u64,
    pool: &[(&[f64], &Observation)],
    max_tries: usize,
) -> Result<UtilityReport> {
    if m == 0 || repeats == 0 || marginal_n == 0 {
        return Err(contract("alhi utility needs m, repeats and marginal_n >= 1"));
    }
    let mut per_repeat = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut rng = rng_for(seed, &[r as u64, 0]);
        let pairs = draw_pairs(sim, prior, action, m, pool, &mut rng, derive_seed(seed, &[r as u64, 1]), max_tries)?;
        let mut mrng = rng_for(seed, &[r as u64, 2]);
        let marginal = truncated_sample(prior, &mut mrng, marginal_n, max_tries).samples;
        per_repeat.push(summarize(&likelihood_terms(nle, &action.values, &pairs, &marginal)?));
    }
    Ok(UtilityReport::from_repeats(action, per_repeat, m * repeats))
}

#[derive(Debug, Clone)]
pub struct AlhiPosterior {
    pub posterior: PriorDensity,
    pub effective_sample_size: f64,
}

/// Posterior from the surrogate likelihood: importance-weight prior draws by
/// `q(x_obs | θ, ξ)`, resample `n_particles`, fit a KDE and truncate it to
/// the box.
#[allow(clippy::too_many_arguments)]
pub fn alhi_posterior(
    nle: &PosteriorEstimator,
    prior: &PriorDensity,
    x_obs: &Observation,
    action: &Action,
    n_importance: usize,
    n_particles: usize,
    seed: u64,
    max_tries: usize,
) -> Result<AlhiPosterior> {
    if n_particles < 100 {
        return Err(contract("alhi posterior needs at least 100 particles"));
    }
    let mut rng = rng_for(seed, &[]);
    let thetas = truncated_sample(prior, &mut rng, n_importance.max(1), max_tries).samples;
    let inputs: Vec<Vec<f64>> = thetas.iter().map(|t| nle_input(t, &action.values)).collect();
    let inputs_r: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
    let targets = vec![x_obs.values.as_slice(); thetas.len()];
    let lw: Vec<f64> = nle
        .log_prob_batch(&targets, &inputs_r)?
        .into_iter()
        .map(|v| if v.is_finite() { v } else { f64::NEG_INFINITY })
        .collect();
    let lse = log_sum_exp(&lw);
    if !lse.is_finite() {
        log::warn!("surrogate likelihood vanished at every importance sample; keeping the prior");
        return Ok(AlhiPosterior {
            posterior: prior.clone(),
            effective_sample_size: 0.0,
        });
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - lse).exp()).collect();
    let ess = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    if ess < 10.0 {
        log::warn!("importance sampling effective sample size {ess:.2} is below 10");
    }
    let dist = WeightedIndex::new(&w).map_err(|e| contract(format!("importance weights: {e}")))?;
    let particles: Vec<Vec<f64>> = (0..n_particles).map(|_| thetas[dist.sample(&mut rng)].clone()).collect();
    let kde = kde_fit(&particles, None, Some(prior.bounds()))?;
    let mog = kde.to_mog()?;
    let t = TruncatedMog::new(mog, prior.bounds().clone(), &mut rng)?;
    Ok(AlhiPosterior {
        posterior: t.into(),
        effective_sample_size: ess,
    })
}
