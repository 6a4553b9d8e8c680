//! Evaluation metrics: log-probability of the true parameter, reproduction
//! error, intersection volume of depth grids, and the mesh-coverage summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{truncated_log_pdf, PriorDensity};
use crate::error::{contract, Result};
use crate::math::{mean, std_dev};
use crate::simulators::{Action, Simulator};

/// Nonnegative `rows × cols` height map, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthGrid {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DepthGrid {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(contract(format!("depth grid {rows}x{cols} with {} values", values.len())));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(contract("depth grid entries must be finite and nonnegative"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// The grid turned by 180 degrees.
    pub fn rotated_180(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { values, ..*self }
    }
}

/// `log p(θ_true)` under a posterior; `−∞` outside its box.
pub fn log_prob_true(posterior: &PriorDensity, theta_true: &[f64]) -> f64 {
    truncated_log_pdf(posterior, theta_true)
}

/// Reproduction error at one action: mean and standard deviation over `n`
/// posterior draws of the task distance between noise-free outputs at the
/// draw and at `theta_true`.
pub fn rep_err<R: Rng + ?Sized>(
    sim: &dyn Simulator,
    posterior: &PriorDensity,
    theta_true: &[f64],
    action: &Action,
    n: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if n < 1 {
        return Err(contract("rep_err needs at least one sample"));
    }
    let reference = sim
        .noiseless(theta_true, action)
        .ok_or_else(|| contract(format!("{} has no noise-free output", sim.spec().name)))?;
    let draws = posterior.sample(rng, n).samples;
    let d: Vec<f64> = draws
        .iter()
        .map(|t| {
            let x = sim.noiseless(t, action).expect("noise-free path checked above");
            sim.distance(&x, &reference)
        })
        .collect();
    Ok((mean(&d), std_dev(&d)))
}

/// Mean over `sims` of the pixelwise-minimum volume shared with `real`.
pub fn inter_vol(real: &DepthGrid, sims: &[DepthGrid]) -> Result<f64> {
    if sims.is_empty() {
        return Err(contract("inter_vol needs at least one simulated grid"));
    }
    let mut total = 0.0;
    for s in sims {
        if (s.rows, s.cols) != (real.rows, real.cols) {
            return Err(contract(format!(
                "grid shape {}x{} does not match {}x{}",
                s.rows, s.cols, real.rows, real.cols
            )));
        }
        total += real.values.iter().zip(&s.values).map(|(a, b)| a.min(*b)).sum::<f64>();
    }
    Ok(total / sims.len() as f64)
}

/// Layout and thresholds of the mesh-coverage summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshCoverage {
    pub blur_radii: Vec<usize>,
    pub tile_rows: usize,
    pub tile_cols: usize,
    /// A blurred pixel counts as covered above `threshold · max`.
    pub threshold: f64,
}

impl Default for MeshCoverage {
    fn default() -> Self {
        Self {
            blur_radii: vec![1, 3, 5],
            tile_rows: 3,
            tile_cols: 4,
            threshold: 1e-6,
        }
    }
}

impl MeshCoverage {
    pub fn len(&self) -> usize {
        self.blur_radii.len() * self.tile_rows * self.tile_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Covered-pixel ratio of each tile (row-major tiles) for each blur
    /// radius, concatenated in radius order.
    pub fn apply(&self, grid: &DepthGrid) -> Result<Vec<f64>> {
        if grid.rows < self.tile_rows || grid.cols < self.tile_cols {
            return Err(contract(format!(
                "grid {}x{} is smaller than the {}x{} tiling",
                grid.rows, grid.cols, self.tile_rows, self.tile_cols
            )));
        }
        let rb = tile_bounds(grid.rows, self.tile_rows);
        let cb = tile_bounds(grid.cols, self.tile_cols);
        let mut out = Vec::with_capacity(self.len());
        for &r in &self.blur_radii {
            let blurred = box_blur(grid, r);
            let max = blurred.iter().copied().fold(0.0, f64::max);
            let cut = self.threshold * max;
            for ti in 0..self.tile_rows {
                for tj in 0..self.tile_cols {
                    let mut covered = 0usize;
                    let mut count = 0usize;
                    for i in rb[ti]..rb[ti + 1] {
                        for j in cb[tj]..cb[tj + 1] {
                            count += 1;
                            if max > 0.0 && blurred[i * grid.cols + j] > cut {
                                covered += 1;
                            }
                        }
                    }
                    out.push(covered as f64 / count as f64);
                }
            }
        }
        Ok(out)
    }
}

/// 36-value mesh coverage with the default layout.
pub fn mesh_coverage(grid: &DepthGrid) -> Result<Vec<f64>> {
    MeshCoverage::default().apply(grid)
}

/// Tile boundaries, mirror-symmetric about the grid centre.
fn tile_bounds(len: usize, parts: usize) -> Vec<usize> {
    let mut b = vec![0; parts + 1];
    for (i, v) in b.iter_mut().enumerate() {
        *v = if 2 * i <= parts { i * len / parts } else { len - (parts - i) * len / parts };
    }
    b
}

/// Mean over the `(2r+1)²` window with edge clamping.
fn box_blur(grid: &DepthGrid, r: usize) -> Vec<f64> {
    let (h, w) = (grid.rows as isize, grid.cols as isize);
    let r = r as isize;
    let mut out = vec![0.0; grid.values.len()];
    for i in 0..h {
        for j in 0..w {
            let mut acc = 0.0;
            for di in -r..=r {
                let ii = (i + di).clamp(0, h - 1) as usize;
                for dj in -r..=r {
                    let jj = (j + dj).clamp(0, w - 1) as usize;
                    acc += grid.values[ii * grid.cols + jj];
                }
            }
            out[(i * w + j) as usize] = acc / ((2 * r + 1) * (2 * r + 1)) as f64;
        }
    }
    out
}

/// Per-run metric tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `log p(θ_true)` under each round's posterior.
    pub log_prob_true: Vec<f64>,
    /// Final-posterior reproduction error keyed by action index.
    pub rep_err: BTreeMap<usize, RepErrEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter_vol: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepErrEntry {
    pub action: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricReport {
    pub fn logprob_csv(&self) -> String {
        let mut s = String::from("round,log_prob_true\n");
        for (r, v) in self.log_prob_true.iter().enumerate() {
            writeln!(s, "{},{}", r + 1, v).unwrap();
        }
        s
    }

    pub fn reperr_csv(&self) -> String {
        let mut s = String::from("action_index,action,mean,std\n");
        for (i, e) in &self.rep_err {
            writeln!(s, "{},{},{},{}", i, join(&e.action, ";"), e.mean, e.std).unwrap();
        }
        s
    }

    pub fn intervol_csv(&self) -> Option<String> {
        self.inter_vol.as_ref().map(|v| {
            let mut s = String::from("round,inter_vol\n");
            for (r, x) in v.iter().enumerate() {
                writeln!(s, "{},{}", r + 1, x).unwrap();
            }
            s
        })
    }
}

pub(crate) fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{BoxPrior, MogDensity, TruncatedMog};
    use crate::seed::rng_for;
    use crate::simulators::{BoxCollision, ToySimulator};

    #[test]
    fn log_prob_of_uniform_priors() {
        let p: PriorDensity = BoxPrior::cube(2, -5.0, 5.0).unwrap().into();
        assert!((log_prob_true(&p, &[-3.0, 1.0]) - (-4.605170)).abs() < 1e-6);
        let p: PriorDensity = BoxPrior::cube(3, 0.0, 1.0).unwrap().into();
        assert_eq!(log_prob_true(&p, &[0.8, 0.8, 0.8]), 0.0);
        assert_eq!(log_prob_true(&p, &[1.8, 0.8, 0.8]), f64::NEG_INFINITY);
    }

    #[test]
    fn log_prob_of_concentrated_posterior() {
        let mut rng = rng_for(1, &[]);
        let base = MogDensity::gaussian_diag(vec![-3.0, 1.0], &[0.01, 0.01]).unwrap();
        let t = TruncatedMog::new(base, BoxPrior::cube(2, -5.0, 5.0).unwrap(), &mut rng).unwrap();
        let lp = log_prob_true(&t.into(), &[-3.0, 1.0]);
        let expected = -(2.0 * std::f64::consts::PI * 1e-4).ln();
        assert!((lp - expected).abs() < 1e-9);
        assert!((lp - 7.37).abs() < 0.01);
    }

    #[test]
    fn rep_err_of_point_mass_is_zero() {
        let mut rng = rng_for(2, &[]);
        let sim = ToySimulator::new();
        let base = MogDensity::gaussian_diag(vec![-3.0, 1.0], &[1e-12, 1e-12]).unwrap();
        let post = TruncatedMog::new(base, BoxPrior::cube(2, -5.0, 5.0).unwrap(), &mut rng).unwrap();
        let a = sim.spec().action_grid.find(&[0.0]).unwrap().clone();
        let (m, s) = rep_err(&sim, &post.into(), &[-3.0, 1.0], &a, 100, &mut rng).unwrap();
        assert!(m < 1e-9 && s < 1e-9);
    }

    #[test]
    fn rep_err_zero_when_everything_falls_off() {
        let mut rng = rng_for(3, &[]);
        let sim = BoxCollision::default();
        let base = MogDensity::gaussian_diag(vec![0.1, 0.1, 0.1], &[0.02, 0.02, 0.02]).unwrap();
        let post = TruncatedMog::new(base, BoxPrior::cube(3, 0.0, 1.0).unwrap(), &mut rng).unwrap();
        let a = sim.spec().action_grid.find(&[20.0]).unwrap().clone();
        let (m, s) = rep_err(&sim, &post.into(), &[0.2, 0.2, 0.2], &a, 200, &mut rng).unwrap();
        assert_eq!((m, s), (0.0, 0.0));
    }

    #[test]
    fn rep_err_uniform_toy_at_zero() {
        // E|Δθ₁|·e³ with θ₁, θ₁' ~ U(−5, 5) independently: E|Δ| = 10/3.
        let mut rng = rng_for(4, &[]);
        let sim = ToySimulator::new();
        let prior: PriorDensity = BoxPrior::cube(2, -5.0, 5.0).unwrap().into();
        let a = sim.spec().action_grid.find(&[0.0]).unwrap().clone();
        let n = 200_000;
        let mut acc = 0.0;
        let truths = 2000;
        for _ in 0..truths {
            let truth = prior.sample(&mut rng, 1).samples.pop().unwrap();
            acc += rep_err(&sim, &prior, &truth, &a, n / truths, &mut rng).unwrap().0;
        }
        let m = acc / truths as f64;
        let expected = 3f64.exp() * 10.0 / 3.0;
        assert!((m - expected).abs() / expected < 0.02, "{m} vs {expected}");
        assert!(rep_err(&sim, &prior, &[0.0, 0.0], &a, 0, &mut rng).is_err());
    }

    #[test]
    fn inter_vol_examples() {
        let a = DepthGrid::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DepthGrid::new(2, 2, vec![2.0, 1.0, 4.0, 3.0]).unwrap();
        assert_eq!(inter_vol(&a, &[b.clone()]).unwrap(), 8.0);
        assert_eq!(inter_vol(&a, &[a.clone()]).unwrap(), 10.0);
        assert_eq!(inter_vol(&a, &[DepthGrid::zeros(2, 2)]).unwrap(), 0.0);
        assert!(inter_vol(&a, &[DepthGrid::zeros(3, 2)]).is_err());
        assert!(DepthGrid::new(1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn mesh_coverage_extremes() {
        let full = DepthGrid::new(16, 16, vec![0.5; 256]).unwrap();
        let c = mesh_coverage(&full).unwrap();
        assert_eq!(c.len(), 36);
        assert!(c.iter().all(|v| *v == 1.0));
        assert!(mesh_coverage(&DepthGrid::zeros(16, 16)).unwrap().iter().all(|v| *v == 0.0));
        assert!(mesh_coverage(&DepthGrid::zeros(2, 2)).is_err());
    }

    #[test]
    fn blur_grows_coverage() {
        let mut g = DepthGrid::zeros(16, 16);
        g.values[7 * 16 + 6] = 1.0;
        let c = mesh_coverage(&g).unwrap();
        // (7, 6) lies in tile row 1, tile column 1.
        let tile = 4 + 1;
        assert!(c[24 + tile] >= c[tile]);
        assert!(c[tile] > 0.0);
    }

    #[test]
    fn tilings_are_symmetric() {
        assert_eq!(tile_bounds(16, 3), vec![0, 5, 11, 16]);
        assert_eq!(tile_bounds(16, 4), vec![0, 4, 8, 12, 16]);
        assert_eq!(tile_bounds(15, 3), vec![0, 5, 10, 15]);
    }
}
