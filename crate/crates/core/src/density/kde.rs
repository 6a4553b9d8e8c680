use serde::{Deserialize, Serialize};

use super::{BoxPrior, MogDensity};
use crate::error::{contract, Result};
use crate::math::LN_2PI;

/// Gaussian-kernel density estimate with a per-dimension bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeDensity {
    pub samples: Vec<Vec<f64>>,
    /// Normalized kernel weights.
    pub weights: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

/// Fits a KDE with Silverman's rule `h_i = σ̂_i (4 / ((d + 2) n))^{1/(d+4)}`.
///
/// With weights, `σ̂` is the weighted standard deviation and `n` the effective
/// sample size `(Σw)² / Σw²`. Zero-variance dimensions are floored at `1e-6`
/// of the box width (or `1e-6` when no box is given).
pub fn kde_fit(samples: &[Vec<f64>], weights: Option<&[f64]>, bounds: Option<&BoxPrior>) -> Result<KdeDensity> {
    let n = samples.len();
    if n < 2 {
        return Err(contract("KDE needs at least two samples"));
    }
    let d = samples[0].len();
    if d == 0 || samples.iter().any(|s| s.len() != d) {
        return Err(contract("KDE samples must share a nonzero dimension"));
    }
    if let Some(b) = bounds {
        if b.dim() != d {
            return Err(contract("KDE bounds dimension mismatch"));
        }
    }
    let w: Vec<f64> = match weights {
        None => vec![1.0 / n as f64; n],
        Some(w) => {
            if w.len() != n || w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(contract("KDE weights must be finite, nonnegative, one per sample"));
            }
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(contract("KDE weights are all zero"));
            }
            w.iter().map(|v| v / total).collect()
        }
    };
    let n_eff = 1.0 / w.iter().map(|v| v * v).sum::<f64>();
    let factor = (4.0 / ((d as f64 + 2.0) * n_eff)).powf(1.0 / (d as f64 + 4.0));
    let bandwidth = (0..d)
        .map(|i| {
            let mean: f64 = samples.iter().zip(&w).map(|(s, wi)| wi * s[i]).sum();
            let var: f64 = samples.iter().zip(&w).map(|(s, wi)| wi * (s[i] - mean).powi(2)).sum();
            let floor = bounds.map_or(1e-6, |b| 1e-6 * (b.upper()[i] - b.lower()[i]));
            (var.sqrt() * factor).max(floor)
        })
        .collect();
    Ok(KdeDensity {
        samples: samples.to_vec(),
        weights: w,
        bandwidth,
    })
}

impl KdeDensity {
    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn log_pdf(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.dim() {
            return Err(contract("KDE dimension mismatch"));
        }
        let norm = -0.5 * self.dim() as f64 * LN_2PI - self.bandwidth.iter().map(|h| h.ln()).sum::<f64>();
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for (s, w) in self.samples.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            let quad: f64 = theta
                .iter()
                .zip(s)
                .zip(&self.bandwidth)
                .map(|((t, x), h)| ((t - x) / h).powi(2))
                .sum();
            let term = w.ln() - 0.5 * quad;
            if term > max {
                sum = sum * (max - term).exp() + 1.0;
                max = term;
            } else {
                sum += (term - max).exp();
            }
        }
        Ok(norm + max + sum.ln())
    }

    /// The same density expressed as an equal-bandwidth diagonal mixture.
    pub fn to_mog(&self) -> Result<MogDensity> {
        let d = self.dim();
        let mut l = vec![0.0; d * d];
        for (i, h) in self.bandwidth.iter().enumerate() {
            l[i * d + i] = *h;
        }
        let total: f64 = self.weights.iter().sum();
        MogDensity::new(
            self.weights.iter().map(|w| w / total).collect(),
            self.samples.clone(),
            vec![l; self.samples.len()],
        )
    }
}
