use ndarray::{Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::net::{self, TargetStats};
use super::{loss_and_grad, InputStandardizer, MdnArchitecture, MdnParams, PosteriorEstimator, TargetMap, TargetScaling};
use crate::density::BoxPrior;
use crate::error::{contract, Error, Result};
use crate::seed::RngState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub grad_clip_norm: f64,
    pub target_scaling: TargetScaling,
    /// When set, the last this-many input coordinates are a discrete action
    /// and the remaining coordinates are standardized per action.
    #[serde(skip)]
    pub actionwise_inputs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 50,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            grad_clip_norm: 10.0,
            target_scaling: TargetScaling::Data,
            actionwise_inputs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(contract("iterations and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(contract("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(contract("Adam betas must lie in [0, 1)"));
        }
        if !(self.grad_clip_norm > 0.0) || !(self.adam_eps > 0.0) {
            return Err(contract("grad_clip_norm and adam_eps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub estimator: PosteriorEstimator,
    /// Minibatch mean NLL (target units) at every iteration.
    pub loss_trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Fits a conditional mixture density network to `(target, input)` pairs by
/// Adam on the mean negative log-likelihood.
///
/// Minibatches are drawn uniformly with replacement using `cfg.seed`; the
/// gradient's 2-norm is clipped at `cfg.grad_clip_norm`. `bounds` is required
/// when `cfg.target_scaling` is [`TargetScaling::Bounds`]. When `warm_start`
/// is given its parameters replace the fresh initialization.
pub fn train(
    arch: &MdnArchitecture,
    data: &[(Vec<f64>, Vec<f64>)],
    cfg: &TrainConfig,
    bounds: Option<&BoxPrior>,
    warm_start: Option<&MdnParams>,
) -> Result<TrainOutcome> {
    arch.validate()?;
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(contract(format!(
            "dataset has {} rows, fewer than batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let (d, p) = (arch.output_dim, arch.input_dim);
    if data.iter().any(|(t, x)| t.len() != d || x.len() != p) {
        return Err(contract("dataset rows do not match the architecture"));
    }

    let standardizer = match cfg.actionwise_inputs {
        Some(a) if a < p => InputStandardizer::fit_actionwise(data.iter().map(|(_, x)| x.as_slice()), p, a),
        Some(_) => return Err(contract("actionwise_inputs must leave at least one observation coordinate")),
        None => InputStandardizer::fit(data.iter().map(|(_, x)| x.as_slice()), p),
    };
    let target_map = match cfg.target_scaling {
        TargetScaling::Data => {
            let s = InputStandardizer::fit(data.iter().map(|(t, _)| t.as_slice()), d);
            TargetMap {
                offset: s.mean,
                scale: s.scale,
            }
        }
        TargetScaling::Bounds => {
            let b = bounds.ok_or_else(|| contract("bounds target scaling needs the parameter box"))?;
            if b.dim() != d {
                return Err(contract("bounds dimension does not match output_dim"));
            }
            TargetMap {
                offset: b.lower().to_vec(),
                scale: b.widths(),
            }
        }
    };

    let inputs: Vec<&[f64]> = data.iter().map(|(_, x)| x.as_slice()).collect();
    let x_all = standardizer.transform(&inputs);
    let u_all: Vec<Vec<f64>> = data.iter().map(|(t, _)| target_map.to_network(t)).collect();
    let log_jac = target_map.log_jacobian();

    let mut rng = RngState::seed_from_u64(cfg.seed);
    let mut params = match warm_start {
        Some(w) if w.0.len() == arch.n_params() => w.0.clone(),
        Some(_) => return Err(contract("warm-start parameters do not match the architecture")),
        None => net::init_params(arch, &mut rng, &target_stats(&u_all, d)),
    };

    let mut adam = Adam::new(params.len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut idx = vec![0usize; cfg.batch_size];
    for it in 0..cfg.iterations {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..data.len());
        }
        let xb: Array2<f64> = x_all.select(Axis(0), &idx);
        let ub: Vec<Vec<f64>> = idx.iter().map(|&i| u_all[i].clone()).collect();
        let (loss_u, mut grad) = loss_and_grad(arch, &params, xb, &ub);
        let loss = loss_u + log_jac;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                last_finite_loss: trace.last().copied(),
                detail: if loss.is_finite() {
                    "non-finite gradient".into()
                } else {
                    "non-finite loss".into()
                },
            });
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm > cfg.grad_clip_norm {
            let s = cfg.grad_clip_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        adam.step(&mut params, &grad, cfg);
        trace.push(loss);
    }

    Ok(TrainOutcome {
        estimator: PosteriorEstimator::new(arch.clone(), MdnParams(params), standardizer, target_map)?,
        loss_trace: trace,
    })
}

fn target_stats(u: &[Vec<f64>], d: usize) -> TargetStats {
    let n = u.len() as f64;
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut std = vec![0.0; d];
    for i in 0..d {
        let mean = u.iter().map(|r| r[i]).sum::<f64>() / n;
        std[i] = (u.iter().map(|r| (r[i] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in u {
            lo[i] = lo[i].min(r[i]);
            hi[i] = hi[i].max(r[i]);
        }
    }
    TargetStats { lo, hi, std }
}
