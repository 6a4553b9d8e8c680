//! Probability-density primitives: Gaussian mixtures, box priors, box-truncated
//! mixtures, and Gaussian kernel density estimates.

mod kde;
mod mog;

pub use kde::{kde_fit, KdeDensity};
pub use mog::{cholesky, MogDensity, MogRecord};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::math::log_mean_exp;

/// Log-density returned for points outside a prior's support.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

/// Samples drawn from the base mixture to estimate a truncated normalizer.
pub const LOG_MASS_SAMPLES: usize = 20_000;

/// Proposals per sample before rejection sampling falls back to clamping.
pub const DEFAULT_MAX_TRIES: usize = 1000;

/// Uniform density on an axis-aligned box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRecord", into = "BoxRecord")]
pub struct BoxPrior {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TryFrom<BoxRecord> for BoxPrior {
    type Error = crate::Error;
    fn try_from(r: BoxRecord) -> Result<Self> {
        BoxPrior::new(r.lower, r.upper)
    }
}

impl From<BoxPrior> for BoxRecord {
    fn from(b: BoxPrior) -> Self {
        BoxRecord {
            lower: b.lower,
            upper: b.upper,
        }
    }
}

impl BoxPrior {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(contract("box bounds must be nonempty and of equal length"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l < u) || !l.is_finite() || !u.is_finite())
        {
            return Err(contract("box needs finite lower[i] < upper[i]"));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn log_volume(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).ln()).sum()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| *t >= *l && *t <= *u)
    }

    pub fn clamp(&self, theta: &mut [f64]) {
        for (t, (l, u)) in theta.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *t = t.clamp(*l, *u);
        }
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }
}

/// A mixture restricted to a box and renormalized by its in-box mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedMog {
    pub base: MogDensity,
    #[serde(rename = "box")]
    pub bounds: BoxPrior,
    /// `log P_base(θ ∈ box)`, in `(−∞, 0]`.
    pub log_mass: f64,
}

impl TruncatedMog {
    /// Truncates `base` to `bounds`, estimating the in-box mass from
    /// [`LOG_MASS_SAMPLES`] draws of the base mixture.
    pub fn new<R: Rng + ?Sized>(base: MogDensity, bounds: BoxPrior, rng: &mut R) -> Result<Self> {
        if base.dim() != bounds.dim() {
            return Err(contract("mixture and box dimension differ"));
        }
        let inside = (0..LOG_MASS_SAMPLES)
            .filter(|_| bounds.contains(&base.sample_one(rng)))
            .count();
        let log_mass = if inside == 0 {
            log::warn!("truncated mixture has no sampled mass inside the box; flooring normalizer");
            (0.5 / LOG_MASS_SAMPLES as f64).ln()
        } else {
            (inside as f64 / LOG_MASS_SAMPLES as f64).ln()
        };
        Ok(Self {
            base,
            bounds,
            log_mass,
        })
    }

    /// Estimates the in-box mass by uniform importance sampling over the box.
    /// Only reliable when the mixture is not much narrower than the box.
    pub fn with_uniform_normalizer<R: Rng + ?Sized>(
        base: MogDensity,
        bounds: BoxPrior,
        rng: &mut R,
        n: usize,
    ) -> Result<Self> {
        if base.dim() != bounds.dim() {
            return Err(contract("mixture and box dimension differ"));
        }
        let terms: Vec<f64> = (0..n)
            .map(|_| base.log_pdf_unchecked(&bounds.sample_one(rng)))
            .collect();
        let log_mass = (log_mean_exp(&terms) + bounds.log_volume()).min(0.0);
        Ok(Self {
            base,
            bounds,
            log_mass,
        })
    }
}

/// A prior over simulator parameters: the initial uniform box or a
/// box-truncated mixture produced by an earlier round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorDensity {
    Box(BoxPrior),
    TruncatedMog(TruncatedMog),
}

impl From<BoxPrior> for PriorDensity {
    fn from(b: BoxPrior) -> Self {
        PriorDensity::Box(b)
    }
}

impl From<TruncatedMog> for PriorDensity {
    fn from(t: TruncatedMog) -> Self {
        PriorDensity::TruncatedMog(t)
    }
}

/// Samples from [`truncated_sample`] plus rejection diagnostics.
#[derive(Debug, Clone)]
pub struct TruncatedSamples {
    pub samples: Vec<Vec<f64>>,
    /// Samples that hit `max_tries` and were clamped onto the box.
    pub clamped: usize,
    pub proposals: usize,
}

impl TruncatedSamples {
    pub fn acceptance_rate(&self) -> f64 {
        (self.samples.len() - self.clamped) as f64 / self.proposals.max(1) as f64
    }
}

impl PriorDensity {
    pub fn bounds(&self) -> &BoxPrior {
        match self {
            PriorDensity::Box(b) => b,
            PriorDensity::TruncatedMog(t) => &t.bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds().dim()
    }

    /// Log-density; [`LOG_ZERO`] outside the box.
    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        truncated_log_pdf(self, theta)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> TruncatedSamples {
        truncated_sample(self, rng, n, DEFAULT_MAX_TRIES)
    }
}

/// Draws `n` samples from a prior. Truncated mixtures use rejection sampling;
/// a sample not accepted within `max_tries` proposals is clamped onto the box.
pub fn truncated_sample<R: Rng + ?Sized>(
    prior: &PriorDensity,
    rng: &mut R,
    n: usize,
    max_tries: usize,
) -> TruncatedSamples {
    match prior {
        PriorDensity::Box(b) => TruncatedSamples {
            samples: (0..n).map(|_| b.sample_one(rng)).collect(),
            clamped: 0,
            proposals: n,
        },
        PriorDensity::TruncatedMog(t) => {
            let mut samples = Vec::with_capacity(n);
            let mut clamped = 0;
            let mut proposals = 0;
            for _ in 0..n {
                let mut accepted = None;
                let mut last = Vec::new();
                for _ in 0..max_tries.max(1) {
                    proposals += 1;
                    let s = t.base.sample_one(rng);
                    if t.bounds.contains(&s) {
                        accepted = Some(s);
                        break;
                    }
                    last = s;
                }
                samples.push(accepted.unwrap_or_else(|| {
                    clamped += 1;
                    t.bounds.clamp(&mut last);
                    last
                }));
            }
            let out = TruncatedSamples {
                samples,
                clamped,
                proposals,
            };
            if n > 0 && out.acceptance_rate() < 1e-4 {
                log::warn!(
                    "truncated sampling acceptance rate {:.2e} ({} of {} samples clamped)",
                    out.acceptance_rate(),
                    clamped,
                    n
                );
            }
            out
        }
    }
}

/// Log-density of a prior at `theta`; [`LOG_ZERO`] outside the box or on a
/// dimension mismatch.
pub fn truncated_log_pdf(prior: &PriorDensity, theta: &[f64]) -> f64 {
    if !prior.bounds().contains(theta) {
        return LOG_ZERO;
    }
    match prior {
        PriorDensity::Box(b) => -b.log_volume(),
        PriorDensity::TruncatedMog(t) => t.base.log_pdf_unchecked(theta) - t.log_mass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    #[test]
    fn box_log_density_values() {
        let b = PriorDensity::from(BoxPrior::cube(2, -5.0, 5.0).unwrap());
        assert!((truncated_log_pdf(&b, &[0.3, -4.0]) - (-4.605170)).abs() < 1e-6);
        let unit = PriorDensity::from(BoxPrior::cube(3, 0.0, 1.0).unwrap());
        assert_eq!(truncated_log_pdf(&unit, &[0.2, 0.5, 0.9]), 0.0);
        assert_eq!(truncated_log_pdf(&b, &[5.1, 0.0]), LOG_ZERO);
    }

    #[test]
    fn box_samples_are_uniform_inside() {
        let b = PriorDensity::from(BoxPrior::cube(2, -5.0, 5.0).unwrap());
        let mut rng = rng_for(11, &[]);
        let s = b.sample(&mut rng, 10_000);
        assert!(s.samples.iter().all(|t| b.bounds().contains(t)));
        for i in 0..2 {
            let m = s.samples.iter().map(|t| t[i]).sum::<f64>() / 10_000.0;
            assert!(m.abs() < 0.15);
        }
    }

    #[test]
    fn wide_mixture_is_hard_truncated() {
        let mut rng = rng_for(12, &[]);
        let base = MogDensity::gaussian_diag(vec![0.5], &[10.0]).unwrap();
        let t = TruncatedMog::new(base, BoxPrior::cube(1, 0.0, 1.0).unwrap(), &mut rng).unwrap();
        let p = PriorDensity::from(t);
        let s = p.sample(&mut rng, 1000);
        assert!(s.samples.iter().all(|v| (0.0..=1.0).contains(&v[0])));
    }

    #[test]
    fn narrow_mixture_inside_box_accepts_nearly_everything() {
        let mut rng = rng_for(13, &[]);
        let base = MogDensity::gaussian_diag(vec![0.5], &[0.01]).unwrap();
        let t = TruncatedMog::new(base, BoxPrior::cube(1, 0.0, 1.0).unwrap(), &mut rng).unwrap();
        assert!(t.log_mass <= 0.0 && t.log_mass > -1e-9);
        let s = PriorDensity::from(t).sample(&mut rng, 5000);
        assert!(s.acceptance_rate() > 0.99);
        assert_eq!(s.clamped, 0);
    }

    #[test]
    fn mixture_outside_box_gets_clamped() {
        let mut rng = rng_for(14, &[]);
        let base = MogDensity::gaussian_diag(vec![50.0], &[0.1]).unwrap();
        let t = TruncatedMog::new(base, BoxPrior::cube(1, 0.0, 1.0).unwrap(), &mut rng).unwrap();
        assert!(t.log_mass.is_finite() && t.log_mass < 0.0);
        let s = truncated_sample(&PriorDensity::from(t), &mut rng, 3, 10);
        assert_eq!(s.clamped, 3);
        assert!(s.samples.iter().all(|v| v[0] == 1.0));
    }

    #[test]
    fn uniform_and_mixture_normalizers_agree_for_wide_base() {
        let mut rng = rng_for(15, &[]);
        let base = MogDensity::gaussian_diag(vec![0.2, 0.9], &[0.5, 0.3]).unwrap();
        let bounds = BoxPrior::cube(2, 0.0, 1.0).unwrap();
        let a = TruncatedMog::new(base.clone(), bounds.clone(), &mut rng).unwrap();
        let b = TruncatedMog::with_uniform_normalizer(base, bounds, &mut rng, 20_000).unwrap();
        assert!((a.log_mass.exp() - b.log_mass.exp()).abs() < 0.02);
    }
}
