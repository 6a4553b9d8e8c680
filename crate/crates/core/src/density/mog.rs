use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::math::LN_2PI;

/// A `K`-component Gaussian mixture whose covariances are stored as lower
/// Cholesky factors (`Σ_k = L_k L_kᵀ`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MogRecord", into = "MogRecord")]
pub struct MogDensity {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `dim × dim` lower-triangular factors.
    chol: Vec<Vec<f64>>,
    /// `log π_k − (d/2) log 2π − Σ_i log L_k[i,i]`.
    log_norm: Vec<f64>,
}

/// Serialized form of a [`MogDensity`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MogRecord {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub chol_factors: Vec<Vec<Vec<f64>>>,
    pub dim: usize,
    pub k: usize,
}

impl TryFrom<MogRecord> for MogDensity {
    type Error = Error;

    fn try_from(r: MogRecord) -> Result<Self> {
        if r.k != r.weights.len() {
            return Err(contract(format!("k = {} but {} weights", r.k, r.weights.len())));
        }
        let d = r.dim;
        let mut chol = Vec::with_capacity(r.k);
        for l in &r.chol_factors {
            if l.len() != d || l.iter().any(|row| row.len() != d) {
                return Err(contract("chol_factors must be dim x dim"));
            }
            chol.push(l.iter().flatten().copied().collect());
        }
        let m = MogDensity::new(r.weights, r.means, chol)?;
        if m.dim != d {
            return Err(contract("dim does not match means"));
        }
        Ok(m)
    }
}

impl From<MogDensity> for MogRecord {
    fn from(m: MogDensity) -> Self {
        let d = m.dim;
        MogRecord {
            k: m.weights.len(),
            dim: d,
            chol_factors: m
                .chol
                .iter()
                .map(|l| l.chunks(d).map(|row| row.to_vec()).collect())
                .collect(),
            weights: m.weights,
            means: m.means,
        }
    }
}

impl MogDensity {
    /// Builds a mixture from weights, means and flat row-major Cholesky
    /// factors. Entries above the diagonal are ignored (treated as zero).
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, mut chol: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(contract("mixture needs at least one component"));
        }
        if means.len() != k || chol.len() != k {
            return Err(contract("weights, means and factors must have equal length"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(contract("zero-dimensional mixture"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(contract("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(contract(format!("weights sum to {total}, expected 1")));
        }
        let mut log_norm = Vec::with_capacity(k);
        for c in 0..k {
            if means[c].len() != dim || chol[c].len() != dim * dim {
                return Err(contract("component dimension mismatch"));
            }
            if means[c].iter().any(|v| !v.is_finite()) {
                return Err(contract("non-finite mean"));
            }
            let l = &mut chol[c];
            let mut log_det = 0.0;
            for i in 0..dim {
                for j in (i + 1)..dim {
                    l[i * dim + j] = 0.0;
                }
                let diag = l[i * dim + i];
                if !(diag > 0.0) || !diag.is_finite() {
                    return Err(contract("Cholesky diagonal must be strictly positive"));
                }
                log_det += diag.ln();
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(contract("non-finite Cholesky entry"));
            }
            log_norm.push(weights[c].ln() - 0.5 * dim as f64 * LN_2PI - log_det);
        }
        Ok(Self {
            dim,
            weights,
            means,
            chol,
            log_norm,
        })
    }

    /// Single Gaussian with diagonal standard deviations.
    pub fn gaussian_diag(mean: Vec<f64>, std: &[f64]) -> Result<Self> {
        let d = mean.len();
        if std.len() != d {
            return Err(contract("std length mismatch"));
        }
        let mut l = vec![0.0; d * d];
        for (i, s) in std.iter().enumerate() {
            l[i * d + i] = *s;
        }
        Self::new(vec![1.0], vec![mean], vec![l])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Row-major Cholesky factor of component `c`.
    pub fn chol(&self, c: usize) -> &[f64] {
        &self.chol[c]
    }

    /// `log Σ_k π_k N(θ; μ_k, Σ_k)`.
    pub fn log_pdf(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim {
            return Err(contract(format!(
                "mixture has dim {}, point has {}",
                self.dim,
                theta.len()
            )));
        }
        Ok(self.log_pdf_unchecked(theta))
    }

    pub(crate) fn log_pdf_unchecked(&self, theta: &[f64]) -> f64 {
        let d = self.dim;
        let mut stack = [0.0f64; 16];
        let mut heap;
        let z: &mut [f64] = if d <= 16 {
            &mut stack[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap
        };
        // Streaming log-sum-exp over components.
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for c in 0..self.k() {
            if self.log_norm[c] == f64::NEG_INFINITY {
                continue;
            }
            let l = &self.chol[c];
            let mu = &self.means[c];
            let mut quad = 0.0;
            for i in 0..d {
                let mut s = theta[i] - mu[i];
                for j in 0..i {
                    s -= l[i * d + j] * z[j];
                }
                z[i] = s / l[i * d + i];
                quad += z[i] * z[i];
            }
            let t = self.log_norm[c] - 0.5 * quad;
            if t > max {
                sum = sum * (max - t).exp() + 1.0;
                max = t;
            } else {
                sum += (t - max).exp();
            }
        }
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + sum.ln()
    }

    /// Per-component log joint `log π_k + log N(θ; μ_k, Σ_k)`.
    pub fn component_log_terms(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut z = vec![0.0; d];
        (0..self.k())
            .map(|c| {
                let l = &self.chol[c];
                let mu = &self.means[c];
                let mut quad = 0.0;
                for i in 0..d {
                    let mut s = theta[i] - mu[i];
                    for j in 0..i {
                        s -= l[i * d + j] * z[j];
                    }
                    z[i] = s / l[i * d + i];
                    quad += z[i] * z[i];
                }
                self.log_norm[c] - 0.5 * quad
            })
            .collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let c = self.pick_component(rng.random::<f64>());
        let d = self.dim;
        let l = &self.chol[c];
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| self.means[c][i] + (0..=i).map(|j| l[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample_one(rng)).collect()
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (c, w) in self.weights.iter().enumerate() {
            if *w > 0.0 {
                last_positive = c;
                acc += w;
                if u < acc {
                    return c;
                }
            }
        }
        last_positive
    }

    /// Pushforward through `θ = offset + scale ⊙ u`.
    pub fn affine_map(&self, offset: &[f64], scale: &[f64]) -> Result<Self> {
        let d = self.dim;
        if offset.len() != d || scale.len() != d || scale.iter().any(|s| !(*s > 0.0)) {
            return Err(contract("affine map needs positive scales of matching dimension"));
        }
        let means = self
            .means
            .iter()
            .map(|m| (0..d).map(|i| offset[i] + scale[i] * m[i]).collect())
            .collect();
        let chol = self
            .chol
            .iter()
            .map(|l| {
                let mut out = l.clone();
                for i in 0..d {
                    for j in 0..=i {
                        out[i * d + j] *= scale[i];
                    }
                }
                out
            })
            .collect();
        Self::new(self.weights.clone(), means, chol)
    }

    /// Marginal over the coordinates listed in `dims` (in that order).
    ///
    /// The marginal covariance of a Gaussian is the corresponding sub-block of
    /// `Σ`; its Cholesky factor is recomputed from that block.
    pub fn marginal(&self, dims: &[usize]) -> Result<Self> {
        let d = self.dim;
        if dims.is_empty() || dims.iter().any(|&i| i >= d) {
            return Err(contract("marginal dims out of range"));
        }
        let m = dims.len();
        let mut means = Vec::with_capacity(self.k());
        let mut chol = Vec::with_capacity(self.k());
        for c in 0..self.k() {
            let l = &self.chol[c];
            let cov = |a: usize, b: usize| (0..=a.min(b)).map(|j| l[a * d + j] * l[b * d + j]).sum::<f64>();
            let mut block = vec![0.0; m * m];
            for (r, &a) in dims.iter().enumerate() {
                for (s, &b) in dims.iter().enumerate() {
                    block[r * m + s] = cov(a, b);
                }
            }
            chol.push(cholesky(&block, m)?);
            means.push(dims.iter().map(|&i| self.means[c][i]).collect());
        }
        Self::new(self.weights.clone(), means, chol)
    }
}

/// Cholesky factorization of a symmetric positive definite row-major matrix.
pub fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for p in 0..j {
                s -= l[i * n + p] * l[j * n + p];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(contract("matrix is not positive definite"));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    Ok(l)
}
