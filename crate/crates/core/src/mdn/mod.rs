//! Mixture density networks: the action-conditioned posterior estimator
//! `q(θ | x, ξ)` and, with roles swapped, the surrogate likelihood
//! `q(x | θ, ξ)` used by the likelihood-based baselines.

mod net;
mod train;

pub use net::DIAG_FLOOR;
pub use train::{train, TrainConfig, TrainOutcome};

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::density::MogDensity;
use crate::error::{contract, Error, Result};
use net::HeadLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariance {
    #[default]
    Full,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdnArchitecture {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub k: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub covariance: Covariance,
}

impl MdnArchitecture {
    pub fn new(input_dim: usize, output_dim: usize, hidden_sizes: Vec<usize>, k: usize) -> Result<Self> {
        let arch = Self {
            input_dim,
            output_dim,
            hidden_sizes,
            k,
            activation: Activation::default(),
            covariance: Covariance::default(),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_covariance(mut self, covariance: Covariance) -> Self {
        self.covariance = covariance;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.k == 0 || self.hidden_sizes.contains(&0) {
            return Err(contract("architecture sizes must all be at least 1"));
        }
        if self.covariance == Covariance::Full && self.output_dim > 16 {
            return Err(contract("full covariance is limited to 16 output dimensions"));
        }
        Ok(())
    }

    /// Width of the mixture head: `K·(1 + d + d(d+1)/2)` for full covariance.
    pub fn head_width(&self) -> usize {
        HeadLayout::of(self).width()
    }

    pub fn n_params(&self) -> usize {
        net::n_params(self)
    }
}

/// Flattened network weights and biases, layer by layer (`W` row-major then `b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MdnParams(pub Vec<f64>);

/// Per-coordinate affine standardization of network inputs.
///
/// With `per_action`, the leading (observation) coordinates of an input whose
/// trailing coordinates equal a known grid action are first standardized with
/// that action's statistics; the global `mean`/`scale` then apply to every
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStandardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_action: Option<ActionwiseScaling>,
}

/// Observation statistics for each distinct action in the training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionwiseScaling {
    pub action_dim: usize,
    pub actions: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub scale: Vec<Vec<f64>>,
}

impl ActionwiseScaling {
    fn lookup(&self, action: &[f64]) -> Option<usize> {
        self.actions.iter().position(|a| a.as_slice() == action)
    }
}

fn moments(rows: &[&[f64]], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mean: Vec<f64> = (0..dim).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / n).collect();
    let sd = (0..dim)
        .map(|i| (rows.iter().map(|r| (r[i] - mean[i]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    (mean, sd)
}

impl InputStandardizer {
    pub const MIN_SCALE: f64 = 1e-8;

    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let (mean, sd) = moments(&rows, dim);
        Self {
            mean,
            scale: sd.into_iter().map(|s| s.max(Self::MIN_SCALE)).collect(),
            per_action: None,
        }
    }

    /// Fits action-wise observation statistics, treating the last
    /// `action_dim` coordinates as the action, then the global statistics on
    /// the transformed rows. A coordinate that is constant under one action
    /// falls back to its global spread.
    pub fn fit_actionwise<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize, action_dim: usize) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let obs_dim = dim.saturating_sub(action_dim);
        let (_, global_sd) = moments(&rows, dim);
        let mut actions: Vec<Vec<f64>> = Vec::new();
        let mut members: Vec<Vec<&[f64]>> = Vec::new();
        for r in &rows {
            let a = &r[obs_dim..];
            match actions.iter().position(|x| x.as_slice() == a) {
                Some(i) => members[i].push(r),
                None => {
                    actions.push(a.to_vec());
                    members.push(vec![r]);
                }
            }
        }
        let mut means = Vec::with_capacity(actions.len());
        let mut scales = Vec::with_capacity(actions.len());
        for m in &members {
            let (mu, sd) = moments(m, obs_dim);
            means.push(mu);
            scales.push(
                sd.iter()
                    .zip(&global_sd)
                    .map(|(s, g)| {
                        if *s > Self::MIN_SCALE {
                            *s
                        } else if *g > Self::MIN_SCALE {
                            *g
                        } else {
                            1.0
                        }
                    })
                    .collect(),
            );
        }
        let mut out = Self::identity(dim);
        out.per_action = Some(ActionwiseScaling {
            action_dim,
            actions,
            mean: means,
            scale: scales,
        });
        let pre: Vec<Vec<f64>> = rows.iter().map(|r| out.pre_transform(r)).collect();
        let g = Self::fit(pre.iter().map(|v| v.as_slice()), dim);
        out.mean = g.mean;
        out.scale = g.scale;
        out
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            per_action: None,
        }
    }

    fn pre_transform(&self, row: &[f64]) -> Vec<f64> {
        let mut v = row.to_vec();
        if let Some(pa) = &self.per_action {
            let obs_dim = row.len() - pa.action_dim;
            if let Some(i) = pa.lookup(&row[obs_dim..]) {
                for j in 0..obs_dim {
                    v[j] = (v[j] - pa.mean[i][j]) / pa.scale[i][j];
                }
            }
        }
        v
    }

    /// Standardized batch, one row per input.
    pub fn transform(&self, rows: &[&[f64]]) -> Array2<f64> {
        if self.per_action.is_none() {
            return net::standardize(rows, &self.mean, &self.scale);
        }
        let pre: Vec<Vec<f64>> = rows.iter().map(|r| self.pre_transform(r)).collect();
        let pre_r: Vec<&[f64]> = pre.iter().map(|v| v.as_slice()).collect();
        net::standardize(&pre_r, &self.mean, &self.scale)
    }
}

/// How training targets are mapped into the network's output space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetScaling {
    /// Z-score with the training set's mean and standard deviation.
    #[default]
    Data,
    /// Affine map of the parameter box onto the unit box.
    Bounds,
}

/// `target = offset + scale ⊙ u`, where `u` lives in network output space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMap {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl TargetMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            offset: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    fn to_network(&self, target: &[f64]) -> Vec<f64> {
        target
            .iter()
            .zip(&self.offset)
            .zip(&self.scale)
            .map(|((t, o), s)| (t - o) / s)
            .collect()
    }

    fn log_jacobian(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// A trained conditional density network `q(target | input)`.
///
/// Serializes to a self-describing JSON document holding the architecture,
/// the flattened parameters, the input standardizer and the target map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorEstimator {
    pub arch: MdnArchitecture,
    pub params: MdnParams,
    pub standardizer: InputStandardizer,
    pub target_map: TargetMap,
}

impl PosteriorEstimator {
    pub fn new(
        arch: MdnArchitecture,
        params: MdnParams,
        standardizer: InputStandardizer,
        target_map: TargetMap,
    ) -> Result<Self> {
        arch.validate()?;
        if params.0.len() != arch.n_params() {
            return Err(contract(format!(
                "expected {} parameters, got {}",
                arch.n_params(),
                params.0.len()
            )));
        }
        if standardizer.mean.len() != arch.input_dim || standardizer.scale.len() != arch.input_dim {
            return Err(contract("standardizer does not match input_dim"));
        }
        if let Some(pa) = &standardizer.per_action {
            let obs = arch.input_dim.checked_sub(pa.action_dim).filter(|o| *o > 0);
            let ok = obs.is_some_and(|o| {
                pa.mean.len() == pa.actions.len()
                    && pa.scale.len() == pa.actions.len()
                    && pa.actions.iter().all(|a| a.len() == pa.action_dim)
                    && pa.mean.iter().chain(&pa.scale).all(|v| v.len() == o)
            });
            if !ok {
                return Err(contract("action-wise standardizer does not match the architecture"));
            }
        }
        if target_map.offset.len() != arch.output_dim || target_map.scale.len() != arch.output_dim {
            return Err(contract("target map does not match output_dim"));
        }
        Ok(Self {
            arch,
            params,
            standardizer,
            target_map,
        })
    }

    /// A network whose output is `mog` for every input: zero weights, with
    /// the head biases encoding the mixture. Requires Cholesky diagonals above
    /// [`DIAG_FLOOR`].
    pub fn constant(input_dim: usize, hidden_sizes: Vec<usize>, mog: &MogDensity, covariance: Covariance) -> Result<Self> {
        let (k, d) = (mog.k(), mog.dim());
        let arch = MdnArchitecture::new(input_dim, d, hidden_sizes, k)?.with_covariance(covariance);
        arch.validate()?;
        let layout = HeadLayout::of(&arch);
        let mut bias = vec![0.0; layout.width()];
        for c in 0..k {
            bias[c] = mog.weights()[c].max(1e-300).ln();
            let l = mog.chol(c);
            for i in 0..d {
                bias[layout.mean(c) + i] = mog.means()[c][i];
                let li = l[i * d + i];
                if li <= DIAG_FLOOR {
                    return Err(contract(format!("Cholesky diagonal {li} is not above the floor")));
                }
                bias[layout.diag(c) + i] = crate::math::softplus_inv(li - DIAG_FLOOR);
            }
            let mut p = layout.off(c);
            for i in 1..d {
                for j in 0..i {
                    if layout.full {
                        bias[p] = l[i * d + j];
                        p += 1;
                    } else if l[i * d + j] != 0.0 {
                        return Err(contract("diagonal head cannot encode a correlated component"));
                    }
                }
            }
        }
        let mut params = vec![0.0; arch.n_params()];
        let n = params.len();
        params[n - bias.len()..].copy_from_slice(&bias);
        Self::new(
            arch,
            MdnParams(params),
            InputStandardizer::identity(input_dim),
            TargetMap::identity(d),
        )
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.arch.input_dim {
            return Err(contract(format!(
                "network expects {} inputs, got {}",
                self.arch.input_dim,
                input.len()
            )));
        }
        Ok(())
    }

    fn head(&self, inputs: &[&[f64]]) -> Result<Array2<f64>> {
        for i in inputs {
            self.check_input(i)?;
        }
        let x = self.standardizer.transform(inputs);
        let head = net::forward(&self.arch, &self.params.0, x).head;
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: 0,
                last_finite_loss: None,
                detail: "non-finite network output".into(),
            });
        }
        Ok(head)
    }

    /// Conditional mixture for one input, in target units.
    pub fn forward(&self, input: &[f64]) -> Result<MogDensity> {
        Ok(self.forward_batch(&[input])?.pop().expect("one row"))
    }

    pub fn forward_batch(&self, inputs: &[&[f64]]) -> Result<Vec<MogDensity>> {
        let head = self.head(inputs)?;
        let layout = HeadLayout::of(&self.arch);
        head.rows()
            .into_iter()
            .map(|r| {
                layout
                    .decode(r.as_slice().expect("contiguous"))?
                    .affine_map(&self.target_map.offset, &self.target_map.scale)
            })
            .collect()
    }

    /// `log q(target_i | input_i)` for each pair, without materializing mixtures.
    pub fn log_prob_batch(&self, targets: &[&[f64]], inputs: &[&[f64]]) -> Result<Vec<f64>> {
        if targets.len() != inputs.len() {
            return Err(contract("targets and inputs differ in length"));
        }
        if targets.iter().any(|t| t.len() != self.arch.output_dim) {
            return Err(contract("target dimension mismatch"));
        }
        let head = self.head(inputs)?;
        let layout = HeadLayout::of(&self.arch);
        let lj = self.target_map.log_jacobian();
        Ok(head
            .rows()
            .into_iter()
            .zip(targets)
            .map(|(r, t)| {
                let u = self.target_map.to_network(t);
                -layout.nll(r.as_slice().expect("contiguous"), &u, None) - lj
            })
            .collect())
    }

    fn split<'a>(&self, batch: &'a [(Vec<f64>, Vec<f64>)]) -> Result<(Vec<&'a [f64]>, Vec<&'a [f64]>)> {
        if batch.is_empty() {
            return Err(contract("empty batch"));
        }
        Ok(batch.iter().map(|(t, x)| (t.as_slice(), x.as_slice())).unzip())
    }

    /// Mean negative log-likelihood `−(1/|B|) Σ log q(target | input)`.
    pub fn nll_loss(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
        let (targets, inputs) = self.split(batch)?;
        let lp = self.log_prob_batch(&targets, &inputs)?;
        let loss = -lp.iter().sum::<f64>() / lp.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: 0,
                last_finite_loss: None,
                detail: "non-finite loss".into(),
            });
        }
        Ok(loss)
    }

    /// Gradient of [`nll_loss`](Self::nll_loss) with respect to the flattened parameters.
    pub fn nll_grad(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Result<Vec<f64>> {
        let (targets, inputs) = self.split(batch)?;
        for i in &inputs {
            self.check_input(i)?;
        }
        let targets_u: Vec<Vec<f64>> = targets.iter().map(|t| self.target_map.to_network(t)).collect();
        let x = self.standardizer.transform(&inputs);
        let (_, grad) = loss_and_grad(&self.arch, &self.params.0, x, &targets_u);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence {
                iteration: 0,
                last_finite_loss: None,
                detail: "non-finite gradient".into(),
            });
        }
        Ok(grad)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let e: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(e.arch, e.params, e.standardizer, e.target_map)
    }
}

/// Mean NLL in network space and its parameter gradient for a standardized batch.
pub(crate) fn loss_and_grad(
    arch: &MdnArchitecture,
    params: &[f64],
    x: Array2<f64>,
    targets_u: &[Vec<f64>],
) -> (f64, Vec<f64>) {
    let layout = HeadLayout::of(arch);
    let pass = net::forward(arch, params, x);
    let n = targets_u.len();
    let scale = 1.0 / n as f64;
    let mut head_grad = Array2::zeros(pass.head.raw_dim());
    let mut loss = 0.0;
    for (r, t) in targets_u.iter().enumerate() {
        let row = pass.head.row(r);
        let mut g = head_grad.row_mut(r);
        loss += layout.nll(
            row.as_slice().expect("contiguous"),
            t,
            Some((g.as_slice_mut().expect("contiguous"), scale)),
        );
    }
    let grad = net::backward(arch, params, &pass, head_grad);
    (loss * scale, grad)
}

#[cfg(test)]
mod tests;
