use super::*;
use crate::math::{softplus_inv, LN_2PI};
use crate::seed::rng_for;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_estimator(arch: MdnArchitecture, seed: u64, scale: f64) -> PosteriorEstimator {
    let mut rng = rng_for(seed, &[]);
    let params = (0..arch.n_params()).map(|_| rng.random_range(-scale..scale)).collect();
    let p = arch.input_dim;
    let d = arch.output_dim;
    PosteriorEstimator::new(
        arch,
        MdnParams(params),
        InputStandardizer {
            mean: (0..p).map(|i| 0.1 * i as f64).collect(),
            scale: (0..p).map(|i| 1.0 + 0.5 * i as f64).collect(),
            per_action: None,
        },
        TargetMap {
            offset: (0..d).map(|i| -0.3 * i as f64).collect(),
            scale: (0..d).map(|i| 0.7 + i as f64).collect(),
        },
    )
    .unwrap()
}

fn random_batch(seed: u64, n: usize, d: usize, p: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = rng_for(seed, &[1]);
    (0..n)
        .map(|_| {
            (
                (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
                (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            )
        })
        .collect()
}

/// Network whose weights are all zero and whose head bias encodes a single
/// standard-normal component centred at `mean`.
fn constant_gaussian(mean: &[f64], p: usize) -> PosteriorEstimator {
    let d = mean.len();
    let arch = MdnArchitecture::new(p, d, vec![3], 1).unwrap();
    let mut params = vec![0.0; arch.n_params()];
    let head_width = arch.head_width();
    let bias_start = params.len() - head_width;
    let layout = net::HeadLayout::of(&arch);
    for i in 0..d {
        params[bias_start + layout.mean(0) + i] = mean[i];
        params[bias_start + layout.diag(0) + i] = softplus_inv(1.0 - DIAG_FLOOR);
    }
    PosteriorEstimator::new(arch, MdnParams(params), InputStandardizer::identity(p), TargetMap::identity(d)).unwrap()
}

#[test]
fn head_width_formula() {
    let arch = MdnArchitecture::new(2, 2, vec![128, 128], 5).unwrap();
    assert_eq!(arch.head_width(), 5 * (1 + 2 + 3));
    let diag = arch.clone().with_covariance(Covariance::Diagonal);
    assert_eq!(diag.head_width(), 5 * (1 + 2 + 2));
    assert!(MdnArchitecture::new(0, 1, vec![4], 1).is_err());
}

#[test]
fn forward_output_is_valid_mixture() {
    let arch = MdnArchitecture::new(3, 2, vec![16, 16], 4).unwrap();
    let est = random_estimator(arch, 1, 0.5);
    let mut rng = rng_for(2, &[]);
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = est.forward(&x).unwrap();
        assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for c in 0..m.k() {
            let l = m.chol(c);
            for i in 0..2 {
                // Diagonals are floored at 1e-4 in network space; the target
                // map scales them by ≥ 0.7.
                assert!(l[i * 2 + i] >= 0.7 * DIAG_FLOOR);
            }
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let arch = MdnArchitecture::new(2, 2, vec![8], 3).unwrap();
    let est = random_estimator(arch, 3, 0.5);
    let a = est.forward(&[0.3, -1.2]).unwrap();
    let b = est.forward(&[0.3, -1.2]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_is_sensitive_to_hidden_weights() {
    let arch = MdnArchitecture::new(2, 1, vec![8], 2).unwrap();
    let est = random_estimator(arch, 4, 0.5);
    let mut bumped = est.clone();
    bumped.params.0[0] += 1e-3;
    let x = [0.8, -0.4];
    let a = est.forward(&x).unwrap();
    let b = bumped.forward(&x).unwrap();
    assert_ne!(a, b);
    let t = [0.1];
    assert!((a.log_pdf(&t).unwrap() - b.log_pdf(&t).unwrap()).abs() > 1e-9);
}

#[test]
fn loss_at_gaussian_mode() {
    let target = vec![0.4, -1.1];
    let est = constant_gaussian(&target, 2);
    let loss = est.nll_loss(&[(target, vec![0.5, 0.5])]).unwrap();
    assert!((loss - LN_2PI).abs() < 1e-12, "{loss}");
}

#[test]
fn loss_is_invariant_under_duplication() {
    let arch = MdnArchitecture::new(2, 2, vec![8, 8], 3).unwrap();
    let est = random_estimator(arch, 5, 0.3);
    let batch = random_batch(5, 7, 2, 2);
    let doubled: Vec<_> = batch.iter().chain(batch.iter()).cloned().collect();
    let a = est.nll_loss(&batch).unwrap();
    let b = est.nll_loss(&doubled).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn loss_matches_pointwise_mixture_density() {
    let arch = MdnArchitecture::new(2, 2, vec![8, 8], 3).unwrap();
    let est = random_estimator(arch, 6, 0.3);
    let batch = random_batch(6, 12, 2, 2);
    let oracle = -batch
        .iter()
        .map(|(t, x)| est.forward(x).unwrap().log_pdf(t).unwrap())
        .sum::<f64>()
        / batch.len() as f64;
    assert!((est.nll_loss(&batch).unwrap() - oracle).abs() < 1e-10);
}

fn fd_check(est: &PosteriorEstimator, batch: &[(Vec<f64>, Vec<f64>)], coords: &[usize]) {
    let g = est.nll_grad(batch).unwrap();
    let h = 1e-5;
    for &i in coords {
        let mut plus = est.clone();
        plus.params.0[i] += h;
        let mut minus = est.clone();
        minus.params.0[i] -= h;
        let fd = (plus.nll_loss(batch).unwrap() - minus.nll_loss(batch).unwrap()) / (2.0 * h);
        let denom = fd.abs().max(g[i].abs()).max(1e-8);
        let rel = (fd - g[i]).abs() / denom;
        // Coordinates whose derivative is tiny are dominated by finite
        // difference round-off; compare those in absolute terms.
        assert!(rel < 1e-4 || (fd - g[i]).abs() < 1e-9, "coord {i}: fd {fd} analytic {} rel {rel}", g[i]);
    }
}

#[test]
fn gradient_matches_finite_differences() {
    for (seed, act, cov, d) in [
        (7, Activation::Tanh, Covariance::Full, 2),
        (8, Activation::Tanh, Covariance::Full, 1),
        (9, Activation::Relu, Covariance::Full, 2),
        (10, Activation::Tanh, Covariance::Diagonal, 2),
    ] {
        let arch = MdnArchitecture::new(3, d, vec![8, 8], 2)
            .unwrap()
            .with_activation(act)
            .with_covariance(cov);
        let est = random_estimator(arch.clone(), seed, 0.4);
        let batch = random_batch(seed, 6, d, 3);
        let coords: Vec<usize> = (0..arch.n_params()).collect();
        fd_check(&est, &batch, &coords);
    }
}

#[test]
fn saturated_component_keeps_gradients_finite() {
    let arch = MdnArchitecture::new(1, 1, vec![4], 2).unwrap();
    let mut est = random_estimator(arch.clone(), 11, 0.2);
    let bias_start = arch.n_params() - arch.head_width();
    est.params.0[bias_start] = 60.0;
    est.params.0[bias_start + 1] = -60.0;
    let m = est.forward(&[0.2]).unwrap();
    assert!(m.weights()[1] < 1e-12);
    let g = est.nll_grad(&[(vec![3.0], vec![0.2])]).unwrap();
    assert!(g.iter().all(|v| v.is_finite()));
}

#[test]
fn batch_gradient_is_mean_of_example_gradients() {
    let arch = MdnArchitecture::new(2, 2, vec![8], 3).unwrap();
    let est = random_estimator(arch, 12, 0.3);
    let batch = random_batch(12, 5, 2, 2);
    let g = est.nll_grad(&batch).unwrap();
    let mut mean = vec![0.0; g.len()];
    for ex in &batch {
        let gi = est.nll_grad(std::slice::from_ref(ex)).unwrap();
        for (m, v) in mean.iter_mut().zip(gi) {
            *m += v / batch.len() as f64;
        }
    }
    for (a, b) in g.iter().zip(&mean) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn serialization_reproduces_forward_outputs() {
    let arch = MdnArchitecture::new(2, 2, vec![8], 3).unwrap();
    let est = random_estimator(arch, 13, 0.7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.json");
    est.save(&path).unwrap();
    let back = PosteriorEstimator::load(&path).unwrap();
    assert_eq!(back, est);
    assert_eq!(back.forward(&[1.0, 2.0]).unwrap(), est.forward(&[1.0, 2.0]).unwrap());
}

fn linear_dataset(seed: u64, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = rng_for(seed, &[]);
    (0..n)
        .map(|_| {
            let x: f64 = rng.random_range(-1.0..1.0);
            let e: f64 = rng.sample(StandardNormal);
            (vec![2.0 * x + 0.1 * e], vec![x])
        })
        .collect()
}

#[test]
fn learns_linear_gaussian_conditional() {
    let data = linear_dataset(14, 5000);
    let arch = MdnArchitecture::new(1, 1, vec![32, 32], 5).unwrap();
    let cfg = TrainConfig {
        seed: 3,
        ..TrainConfig::default()
    };
    let out = train(&arch, &data, &cfg, None, None).unwrap();
    let held_out = linear_dataset(15, 4000);
    let nll = out.estimator.nll_loss(&held_out).unwrap();
    // Differential entropy of N(0, 0.1²).
    let entropy = 0.5 * (LN_2PI + 1.0) + 0.1f64.ln();
    assert!((nll - entropy).abs() < 0.3, "nll {nll} entropy {entropy}");
}

#[test]
fn seeded_training_is_reproducible() {
    let data = linear_dataset(16, 300);
    let arch = MdnArchitecture::new(1, 1, vec![8], 2).unwrap();
    let cfg = TrainConfig {
        iterations: 50,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&arch, &data, &cfg, None, None).unwrap();
    let b = train(&arch, &data, &cfg, None, None).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.estimator, b.estimator);
}

#[test]
fn rejects_dataset_smaller_than_batch() {
    let data = linear_dataset(17, 10);
    let arch = MdnArchitecture::new(1, 1, vec![4], 1).unwrap();
    assert!(train(&arch, &data, &TrainConfig::default(), None, None).is_err());
}

#[test]
fn divergence_reports_iteration() {
    let mut data = linear_dataset(18, 100);
    data[0].0[0] = f64::NAN;
    let arch = MdnArchitecture::new(1, 1, vec![4], 1).unwrap();
    let cfg = TrainConfig {
        iterations: 500,
        batch_size: 100,
        ..TrainConfig::default()
    };
    match train(&arch, &data, &cfg, None, None) {
        Err(Error::Divergence { iteration, .. }) => assert_eq!(iteration, 0),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn bounds_scaling_needs_bounds() {
    let data = linear_dataset(19, 100);
    let arch = MdnArchitecture::new(1, 1, vec![4], 1).unwrap();
    let cfg = TrainConfig {
        target_scaling: TargetScaling::Bounds,
        iterations: 5,
        ..TrainConfig::default()
    };
    assert!(train(&arch, &data, &cfg, None, None).is_err());
    let b = crate::density::BoxPrior::cube(1, -3.0, 3.0).unwrap();
    let out = train(&arch, &data, &cfg, Some(&b), None).unwrap();
    assert_eq!(out.estimator.target_map.offset, vec![-3.0]);
    assert_eq!(out.estimator.target_map.scale, vec![6.0]);
}

#[test]
fn constant_estimator_reproduces_mixture() {
    let mog = MogDensity::new(
        vec![0.3, 0.7],
        vec![vec![0.0, 1.0], vec![-2.0, 0.5]],
        vec![vec![1.0, 0.0, 0.4, 0.5], vec![0.3, 0.0, -0.1, 2.0]],
    )
    .unwrap();
    let est = PosteriorEstimator::constant(3, vec![4, 4], &mog, Covariance::Full).unwrap();
    for input in [[0.0, 0.0, 0.0], [5.0, -3.0, 1.0]] {
        let out = est.forward(&input).unwrap();
        for t in [[0.1, 0.2], [-2.0, 1.0], [3.0, -1.0]] {
            let (a, b) = (out.log_pdf(&t).unwrap(), mog.log_pdf(&t).unwrap());
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
    assert!(PosteriorEstimator::constant(3, vec![4], &mog, Covariance::Diagonal).is_err());
}

#[test]
fn actionwise_standardizer_equalizes_scales() {
    // Observation spread grows by orders of magnitude with the action value.
    let mut rng = rng_for(3, &[]);
    let rows: Vec<Vec<f64>> = (0..3000)
        .map(|i| {
            let a = (i % 3) as f64;
            let s = 10f64.powf(2.0 * a);
            vec![5.0 * a + s * rng.sample::<f64, _>(StandardNormal), a]
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let st = InputStandardizer::fit_actionwise(refs.iter().copied(), 2, 1);
    let z = st.transform(&refs);
    for a in 0..3 {
        let col: Vec<f64> = (0..rows.len()).filter(|i| i % 3 == a).map(|i| z[[i, 0]]).collect();
        let sd = crate::math::std_dev(&col);
        assert!((sd - 1.0).abs() < 0.1, "action {a}: sd {sd}");
    }
    let global = InputStandardizer::fit(refs.iter().copied(), 2);
    let zg = global.transform(&refs);
    let small: Vec<f64> = (0..rows.len()).filter(|i| i % 3 == 0).map(|i| zg[[i, 0]]).collect();
    assert!(crate::math::std_dev(&small) < 0.01);

    // Unseen actions pass through the global map only.
    let unseen: &[f64] = &[1.0, 7.0];
    let u = st.transform(&[unseen]);
    assert!((u[[0, 0]] - (1.0 - st.mean[0]) / st.scale[0]).abs() < 1e-12);

    let json = serde_json::to_string(&st).unwrap();
    assert_eq!(serde_json::from_str::<InputStandardizer>(&json).unwrap(), st);
}
