use proptest::prelude::*;

use asbi::cli::{parse_seeds, quantile, ExperimentConfig};
use asbi::density::{BoxPrior, LOG_ZERO, MogDensity, PriorDensity, TruncatedMog};
use asbi::mdn::{InputStandardizer, MdnArchitecture, MdnParams, PosteriorEstimator, TargetMap, DIAG_FLOOR};
use asbi::metrics::{inter_vol, mesh_coverage, rep_err, DepthGrid};
use asbi::seed::{derive_seed, rng_for, SplitMix64};
use asbi::simproto::Message;
use asbi::simulators::{Action, ActionGrid, Backend, Observation, Simulator, SimulatorSpec};

fn mixture_1d() -> impl Strategy<Value = MogDensity> {
    prop::collection::vec((0.05f64..1.0, -3.0f64..3.0, 0.2f64..2.0), 1..5).prop_map(|comps| {
        let total: f64 = comps.iter().map(|c| c.0).sum();
        MogDensity::new(
            comps.iter().map(|c| c.0 / total).collect(),
            comps.iter().map(|c| vec![c.1]).collect(),
            comps.iter().map(|c| vec![c.2]).collect(),
        )
        .unwrap()
    })
}

fn mixture_2d() -> impl Strategy<Value = MogDensity> {
    prop::collection::vec((0.05f64..1.0, -1.5f64..1.5, -1.5f64..1.5, 0.3f64..1.2, -0.5f64..0.5, 0.3f64..1.2), 1..4)
        .prop_map(|comps| {
            let total: f64 = comps.iter().map(|c| c.0).sum();
            MogDensity::new(
                comps.iter().map(|c| c.0 / total).collect(),
                comps.iter().map(|c| vec![c.1, c.2]).collect(),
                comps.iter().map(|c| vec![c.3, 0.0, c.4, c.5]).collect(),
            )
            .unwrap()
        })
}

fn depth_grid(rows: usize, cols: usize) -> impl Strategy<Value = DepthGrid> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..5.0], rows * cols)
        .prop_map(move |v| DepthGrid::new(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mixture_integrates_to_one_1d(m in mixture_1d()) {
        let (lo, hi, n) = (-15.0, 15.0, 6000);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..n).map(|i| m.log_pdf(&[lo + (i as f64 + 0.5) * h]).unwrap().exp() * h).sum();
        prop_assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn mixture_integrates_to_one_2d(m in mixture_2d()) {
        let (lo, hi, n) = (-9.0, 9.0, 300);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let t = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
                total += m.log_pdf(&t).unwrap().exp() * h * h;
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn truncated_mixture_vanishes_outside_box(m in mixture_2d(), x in -10.0f64..10.0, y in -10.0f64..10.0) {
        let bounds = BoxPrior::cube(2, -2.0, 2.0).unwrap();
        let t = PriorDensity::from(TruncatedMog::new(m.clone(), bounds.clone(), &mut rng_for(0, &[])).unwrap());
        let lp = t.log_pdf(&[x, y]);
        if bounds.contains(&[x, y]) {
            prop_assert!(lp.is_finite());
            prop_assert!(lp >= m.log_pdf(&[x, y]).unwrap() - 1e-12);
        } else {
            prop_assert_eq!(lp, LOG_ZERO);
        }
    }

    #[test]
    fn network_heads_are_valid_mixtures(
        seed in any::<u64>(),
        input_dim in 1usize..4,
        output_dim in 1usize..4,
        k in 1usize..5,
        width in 2usize..12,
        diagonal in any::<bool>(),
        scale in 0.1f64..3.0,
        x in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let mut arch = MdnArchitecture::new(input_dim, output_dim, vec![width, width], k).unwrap();
        if diagonal {
            arch = arch.with_covariance(asbi::mdn::Covariance::Diagonal);
        }
        let mut rng = SplitMix64::new(seed);
        let params = (0..arch.n_params()).map(|_| scale * (2.0 * rng.next_f64() - 1.0)).collect();
        let est = PosteriorEstimator::new(
            arch,
            MdnParams(params),
            InputStandardizer::identity(input_dim),
            TargetMap::identity(output_dim),
        )
        .unwrap();
        let m = est.forward(&x[..input_dim]).unwrap();
        prop_assert_eq!(m.k(), k);
        prop_assert!((m.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(m.weights().iter().all(|w| *w >= 0.0));
        for c in 0..k {
            let l = m.chol(c);
            for i in 0..output_dim {
                prop_assert!(l[i * output_dim + i] >= DIAG_FLOOR);
                for j in i + 1..output_dim {
                    prop_assert_eq!(l[i * output_dim + j], 0.0);
                }
            }
        }
        prop_assert!(m.log_pdf(&vec![0.3; output_dim]).unwrap().is_finite());
    }

    #[test]
    fn inter_vol_is_symmetric_and_bounded(a in depth_grid(6, 8), b in depth_grid(6, 8), c in depth_grid(6, 8)) {
        let ab = inter_vol(&a, std::slice::from_ref(&b)).unwrap();
        let ba = inter_vol(&b, std::slice::from_ref(&a)).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= a.total().min(b.total()) + 1e-12);
        prop_assert!((inter_vol(&a, std::slice::from_ref(&a)).unwrap() - a.total()).abs() < 1e-9);
        let both = inter_vol(&a, &[b.clone(), c.clone()]).unwrap();
        let ac = inter_vol(&a, std::slice::from_ref(&c)).unwrap();
        prop_assert!((both - 0.5 * (ab + ac)).abs() < 1e-9);
    }

    #[test]
    fn mesh_coverage_is_a_ratio_and_rotates(g in depth_grid(12, 16)) {
        let cov = mesh_coverage(&g).unwrap();
        prop_assert_eq!(cov.len(), 36);
        prop_assert!(cov.iter().all(|v| (0.0..=1.0).contains(v)));
        let rot = mesh_coverage(&g.rotated_180()).unwrap();
        for block in 0..3 {
            let mut expected = cov[block * 12..(block + 1) * 12].to_vec();
            expected.reverse();
            prop_assert_eq!(&rot[block * 12..(block + 1) * 12], &expected[..]);
        }
    }

    #[test]
    fn mesh_coverage_of_blank_grid_is_zero(rows in 3usize..20, cols in 4usize..20) {
        prop_assert!(mesh_coverage(&DepthGrid::zeros(rows, cols)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rep_err_vanishes_exactly_when_outputs_agree(t0 in -1.0f64..1.0, seed in any::<u64>()) {
        let sim = Stub::new();
        let flat = sim.spec().action_grid.actions()[0].clone();
        let ident = sim.spec().action_grid.actions()[1].clone();
        let post = PriorDensity::Box(BoxPrior::new(vec![2.0], vec![3.0]).unwrap());
        let mut rng = rng_for(seed, &[]);
        let (m, s) = rep_err(&sim, &post, &[t0], &flat, 20, &mut rng).unwrap();
        prop_assert_eq!((m, s), (0.0, 0.0));
        let (m, _) = rep_err(&sim, &post, &[t0], &ident, 20, &mut rng).unwrap();
        prop_assert!(m >= 1.0);
    }

    #[test]
    fn derived_seeds_are_reproducible(base in any::<u64>(), path in prop::collection::vec(any::<u64>(), 0..4), extra in any::<u64>()) {
        prop_assert_eq!(derive_seed(base, &path), derive_seed(base, &path));
        let mut longer = path.clone();
        longer.push(extra);
        prop_assert_ne!(derive_seed(base, &path), derive_seed(base, &longer));
        let (mut a, mut b) = (SplitMix64::new(base), SplitMix64::new(base));
        for _ in 0..16 {
            prop_assert_eq!(a.next_normal().to_bits(), b.next_normal().to_bits());
        }
    }

    #[test]
    fn request_floats_survive_the_wire(theta in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..6), action in prop::collection::vec(-1e300f64..1e300, 1..3), id in any::<u64>(), seed in any::<u64>()) {
        let msg = Message::SimulateRequest { id, theta: theta.clone(), action: action.clone(), seed };
        let back = Message::parse(&msg.to_line()).unwrap();
        match back {
            Message::SimulateRequest { id: i, theta: t, action: a, seed: s } => {
                prop_assert_eq!((i, s), (id, seed));
                prop_assert_eq!(t.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), theta.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
                prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), action.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn config_round_trips(rounds in 1usize..10, sims in 10usize..10_000, seed in any::<u64>(), lr in 1e-5f64..1e-1, hidden in prop::collection::vec(1usize..256, 1..4)) {
        let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy-asbi.json")).unwrap();
        let overrides = vec![
            format!("run.rounds={rounds}"),
            format!("run.sims_per_round={sims}"),
            format!("run.seed={seed}"),
            format!("run.train.learning_rate={lr:?}"),
            format!("run.hidden_sizes={hidden:?}"),
        ];
        let cfg = ExperimentConfig::from_json(&text, &overrides).unwrap();
        prop_assert_eq!(cfg.run.rounds, rounds);
        prop_assert_eq!(cfg.run.seed, seed);
        prop_assert_eq!(cfg.run.train.learning_rate.to_bits(), lr.to_bits());
        let again = ExperimentConfig::from_json(&cfg.to_json(), &[]).unwrap();
        prop_assert_eq!(again, cfg);
    }

    #[test]
    fn seed_lists_expand_ranges(parts in prop::collection::vec((0u64..50, 0u64..5), 1..5)) {
        let text: Vec<String> = parts.iter().map(|(a, w)| if *w == 0 { a.to_string() } else { format!("{a}-{}", a + w) }).collect();
        let seeds = parse_seeds(&text.join(",")).unwrap();
        let expected: Vec<u64> = parts.iter().flat_map(|(a, w)| *a..=a + w).collect();
        prop_assert_eq!(seeds, expected);
    }

    #[test]
    fn quantiles_are_monotone(mut v in prop::collection::vec(-100.0f64..100.0, 1..30), q in 0.0f64..1.0, r in 0.0f64..1.0) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if q <= r { (q, r) } else { (r, q) };
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
        prop_assert!(quantile(&v, lo) >= v[0] && quantile(&v, hi) <= v[v.len() - 1]);
    }

    #[test]
    fn grid_lookup_returns_the_listed_action(levels in prop::collection::vec(prop::collection::btree_set(-20i32..20, 1..4), 1..3)) {
        let levels: Vec<Vec<f64>> = levels.iter().map(|s| s.iter().map(|v| *v as f64 * 0.25).collect()).collect();
        let grid = ActionGrid::product(&levels).unwrap();
        prop_assert_eq!(grid.len(), levels.iter().map(Vec::len).product::<usize>());
        for (i, a) in grid.iter().enumerate() {
            prop_assert_eq!(a.index, i);
            let found = grid.find(&a.values).unwrap();
            prop_assert_eq!(found, a);
        }
    }
}

/// Noise-free output 0 under the first action and θ under the second.
struct Stub {
    spec: SimulatorSpec,
}

impl Stub {
    fn new() -> Self {
        Self {
            spec: SimulatorSpec {
                name: "stub".into(),
                param_dim: 1,
                param_bounds: BoxPrior::cube(1, -5.0, 5.0).unwrap(),
                action_grid: ActionGrid::new(vec![vec![0.0], vec![1.0]]).unwrap(),
                obs_dim: 1,
                backend: Backend::External { command: vec![] },
            },
        }
    }
}

impl Simulator for Stub {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, _seed: u64) -> asbi::Result<Observation> {
        Ok(self.noiseless(theta, action).unwrap())
    }

    fn noiseless(&self, theta: &[f64], action: &Action) -> Option<Observation> {
        Some(Observation::valid(vec![theta[0] * action.values[0]]))
    }
}
