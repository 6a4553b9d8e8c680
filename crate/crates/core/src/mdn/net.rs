//! Feed-forward network with a mixture-density head: batched forward pass,
//! head decoding, and reverse-mode gradients of the mixture negative
//! log-likelihood.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{Activation, Covariance, MdnArchitecture};
use crate::density::MogDensity;
use crate::error::Result;
use crate::math::{sigmoid, softplus, softplus_inv, LN_2PI};

/// Floor added to every softplus-transformed Cholesky diagonal.
pub const DIAG_FLOOR: f64 = 1e-4;

/// Offsets of the head's output blocks for one example.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeadLayout {
    pub k: usize,
    pub d: usize,
    pub full: bool,
}

impl HeadLayout {
    pub fn of(arch: &MdnArchitecture) -> Self {
        Self {
            k: arch.k,
            d: arch.output_dim,
            full: arch.covariance == Covariance::Full,
        }
    }

    pub fn n_off(&self) -> usize {
        if self.full {
            self.d * (self.d - 1) / 2
        } else {
            0
        }
    }

    pub fn width(&self) -> usize {
        self.k * (1 + 2 * self.d + self.n_off())
    }

    pub fn mean(&self, c: usize) -> usize {
        self.k + c * self.d
    }

    pub fn diag(&self, c: usize) -> usize {
        self.k + self.k * self.d + c * self.d
    }

    pub fn off(&self, c: usize) -> usize {
        self.k + 2 * self.k * self.d + c * self.n_off()
    }

    /// Builds the Cholesky factor of component `c` from raw head outputs.
    fn factor(&self, row: &[f64], c: usize, l: &mut [f64]) {
        let d = self.d;
        l.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            l[i * d + i] = softplus(row[self.diag(c) + i]) + DIAG_FLOOR;
        }
        if self.full {
            let mut p = self.off(c);
            for i in 1..d {
                for j in 0..i {
                    l[i * d + j] = row[p];
                    p += 1;
                }
            }
        }
    }

    /// Decodes one head row into a mixture over the network's target space.
    pub fn decode(&self, row: &[f64]) -> Result<MogDensity> {
        let (k, d) = (self.k, self.d);
        let logits = &row[..k];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weights = exps.iter().map(|e| e / total).collect();
        let means = (0..k).map(|c| row[self.mean(c)..self.mean(c) + d].to_vec()).collect();
        let chol = (0..k)
            .map(|c| {
                let mut l = vec![0.0; d * d];
                self.factor(row, c, &mut l);
                l
            })
            .collect();
        MogDensity::new(weights, means, chol)
    }

    /// `−log q(target | row)` in target space, optionally accumulating
    /// `scale · ∂/∂row` into `grad`.
    pub fn nll(&self, row: &[f64], target: &[f64], grad: Option<(&mut [f64], f64)>) -> f64 {
        let (k, d) = (self.k, self.d);
        let logits = &row[..k];
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse_logits = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();

        let mut l = vec![0.0; d * d];
        let mut zs = vec![0.0; k * d];
        let mut ws = vec![0.0; k * d];
        let mut inv_diag = vec![0.0; k * d];
        let mut terms = vec![0.0; k];
        for c in 0..k {
            self.factor(row, c, &mut l);
            let mu = &row[self.mean(c)..self.mean(c) + d];
            let z = &mut zs[c * d..(c + 1) * d];
            let mut quad = 0.0;
            let mut log_det = 0.0;
            for i in 0..d {
                let mut acc = target[i] - mu[i];
                for j in 0..i {
                    acc -= l[i * d + j] * z[j];
                }
                z[i] = acc / l[i * d + i];
                quad += z[i] * z[i];
                log_det += l[i * d + i].ln();
                inv_diag[c * d + i] = 1.0 / l[i * d + i];
            }
            // w = L⁻ᵀ z
            let w = &mut ws[c * d..(c + 1) * d];
            for i in (0..d).rev() {
                let mut acc = z[i];
                for j in (i + 1)..d {
                    acc -= l[j * d + i] * w[j];
                }
                w[i] = acc / l[i * d + i];
            }
            terms[c] = (logits[c] - lse_logits) - 0.5 * d as f64 * LN_2PI - log_det - 0.5 * quad;
        }
        let tmax = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = tmax + terms.iter().map(|t| (t - tmax).exp()).sum::<f64>().ln();

        if let Some((g, scale)) = grad {
            for c in 0..k {
                let gamma = (terms[c] - lse).exp();
                let pi = (logits[c] - lse_logits).exp();
                g[c] += scale * (pi - gamma);
                let z = &zs[c * d..(c + 1) * d];
                let w = &ws[c * d..(c + 1) * d];
                for i in 0..d {
                    g[self.mean(c) + i] -= scale * gamma * w[i];
                    let dl = w[i] * z[i] - inv_diag[c * d + i];
                    g[self.diag(c) + i] -= scale * gamma * dl * sigmoid(row[self.diag(c) + i]);
                }
                if self.full {
                    let mut p = self.off(c);
                    for i in 1..d {
                        for j in 0..i {
                            g[p] -= scale * gamma * w[i] * z[j];
                            p += 1;
                        }
                    }
                }
            }
        }
        -lse
    }
}

/// Shapes `(fan_in, fan_out)` of every layer including the head.
pub(crate) fn layer_shapes(arch: &MdnArchitecture) -> Vec<(usize, usize)> {
    let mut dims = vec![arch.input_dim];
    dims.extend(&arch.hidden_sizes);
    dims.push(HeadLayout::of(arch).width());
    dims.windows(2).map(|w| (w[0], w[1])).collect()
}

pub(crate) fn n_params(arch: &MdnArchitecture) -> usize {
    layer_shapes(arch).iter().map(|(i, o)| i * o + o).sum()
}

/// Borrowed weight matrix (`fan_out × fan_in`) and bias of each layer.
fn layers<'a>(arch: &MdnArchitecture, params: &'a [f64]) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let mut off = 0;
    layer_shapes(arch)
        .into_iter()
        .map(|(fi, fo)| {
            let w = ArrayView2::from_shape((fo, fi), &params[off..off + fi * fo]).expect("layer shape");
            off += fi * fo;
            let b = ArrayView1::from(&params[off..off + fo]);
            off += fo;
            (w, b)
        })
        .collect()
}

/// Activations of every hidden layer (index 0 is the input) and the head.
pub(crate) struct ForwardPass {
    pub activations: Vec<Array2<f64>>,
    pub head: Array2<f64>,
}

pub(crate) fn forward(arch: &MdnArchitecture, params: &[f64], input: Array2<f64>) -> ForwardPass {
    let ls = layers(arch, params);
    let (head_w, head_b) = ls.last().expect("head layer");
    let mut activations = vec![input];
    for (w, b) in &ls[..ls.len() - 1] {
        let mut z = activations.last().unwrap().dot(&w.t());
        z += b;
        match arch.activation {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
        }
        activations.push(z);
    }
    let mut head = activations.last().unwrap().dot(&head_w.t());
    head += head_b;
    if !head.is_standard_layout() {
        head = head.as_standard_layout().into_owned();
    }
    ForwardPass { activations, head }
}

/// Back-propagates `head_grad` (∂loss/∂head, one row per example) and
/// returns the flattened parameter gradient.
pub(crate) fn backward(arch: &MdnArchitecture, params: &[f64], pass: &ForwardPass, head_grad: Array2<f64>) -> Vec<f64> {
    let ls = layers(arch, params);
    let shapes = layer_shapes(arch);
    let mut grad = vec![0.0; n_params(arch)];
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for (fi, fo) in &shapes {
        offsets.push(off);
        off += fi * fo + fo;
    }
    let mut g = head_grad;
    for l in (0..ls.len()).rev() {
        let a = &pass.activations[l];
        let (fi, fo) = shapes[l];
        let gw = g.t().dot(a);
        let gb = g.sum_axis(Axis(0));
        let o = offsets[l];
        for (dst, src) in grad[o..o + fi * fo].iter_mut().zip(gw.iter()) {
            *dst = *src;
        }
        for (dst, src) in grad[o + fi * fo..o + fi * fo + fo].iter_mut().zip(gb.iter()) {
            *dst = *src;
        }
        if l > 0 {
            let mut prev = g.dot(&ls[l].0);
            match arch.activation {
                Activation::Tanh => prev.zip_mut_with(a, |p, &av| *p *= 1.0 - av * av),
                Activation::Relu => prev.zip_mut_with(a, |p, &av| {
                    if av <= 0.0 {
                        *p = 0.0
                    }
                }),
            }
            g = prev;
        }
    }
    grad
}

/// Summary of the standardized training targets, used to place the initial
/// mixture.
#[derive(Debug, Clone)]
pub(crate) struct TargetStats {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub std: Vec<f64>,
}

/// Uniform ±√(6/(fan_in+fan_out)) hidden weights; head weights at a tenth of
/// that scale; head biases set so the initial mixture has uniform weights,
/// component means spread across the target range, and σ ≈ half the target
/// standard deviation.
pub(crate) fn init_params<R: Rng + ?Sized>(arch: &MdnArchitecture, rng: &mut R, stats: &TargetStats) -> Vec<f64> {
    let shapes = layer_shapes(arch);
    let mut p = Vec::with_capacity(n_params(arch));
    let last = shapes.len() - 1;
    for (l, (fi, fo)) in shapes.iter().enumerate() {
        let limit = (6.0 / (fi + fo) as f64).sqrt() * if l == last { 0.1 } else { 1.0 };
        p.extend((0..fi * fo).map(|_| rng.random_range(-limit..limit)));
        if l < last {
            p.extend(std::iter::repeat_n(0.0, *fo));
        } else {
            let h = HeadLayout::of(arch);
            let mut b = vec![0.0; *fo];
            for c in 0..h.k {
                let pos = (c as f64 + 0.5) / h.k as f64;
                for i in 0..h.d {
                    b[h.mean(c) + i] = stats.lo[i] + pos * (stats.hi[i] - stats.lo[i]);
                    let sigma = (0.5 * stats.std[i]).max(10.0 * DIAG_FLOOR);
                    b[h.diag(c) + i] = softplus_inv(sigma - DIAG_FLOOR);
                }
            }
            p.extend(b);
        }
    }
    p
}

/// Standardizes a batch of rows in place of a fresh matrix.
pub(crate) fn standardize(rows: &[&[f64]], mean: &[f64], scale: &[f64]) -> Array2<f64> {
    let n = rows.len();
    let d = mean.len();
    let mut out = Array2::zeros((n, d));
    for (r, row) in rows.iter().enumerate() {
        let mut dst = out.slice_mut(s![r, ..]);
        for i in 0..d {
            dst[i] = (row[i] - mean[i]) / scale[i];
        }
    }
    out
}

