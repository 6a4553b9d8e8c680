use std::sync::Arc;
use std::thread;
use std::time::Duration;

use asbi::density::{BoxPrior, PriorDensity};
use asbi::inference::generate_training_set;
use asbi::simproto::{validate_plugin, PluginHandle, PluginSimulator, SessionState};
use asbi::simulators::{toy_simulate, ActionGrid, Simulator, ToySimulator};
use asbi::seed::SplitMix64;
use asbi::Error;

const T: Duration = Duration::from_secs(20);

fn plugin(args: &[&str]) -> Vec<String> {
    let mut v = vec![env!("CARGO_BIN_EXE_asbi-plugin").to_string()];
    v.extend(args.iter().map(|s| s.to_string()));
    v
}

fn toy_requests(n: usize, offset: u64) -> Vec<(Vec<f64>, Vec<f64>, u64)> {
    (0..n)
        .map(|i| {
            let f = i as f64;
            (
                vec![-5.0 + (f * 0.37) % 10.0, -5.0 + (f * 0.91) % 10.0],
                vec![-5.0 + 0.5 * (i % 21) as f64],
                offset + i as u64 * 7919,
            )
        })
        .collect()
}

fn assert_matches_builtin(reqs: &[(Vec<f64>, Vec<f64>, u64)], got: Vec<asbi::Result<asbi::simulators::Observation>>) {
    assert_eq!(got.len(), reqs.len());
    for ((t, a, s), x) in reqs.iter().zip(got) {
        let x = x.unwrap();
        let want = toy_simulate(t, a[0], &mut SplitMix64::new(*s));
        assert_eq!(x.values.len(), 1);
        assert_eq!(x.values[0].to_bits(), want.to_bits(), "θ={t:?} ξ={a:?} seed={s}");
    }
}

#[test]
fn toy_hello_reports_dimensions() {
    let h = PluginHandle::launch(&plugin(&["toy"]), T).unwrap();
    assert_eq!(h.state(), SessionState::Ready);
    assert_eq!((h.info().param_dim, h.info().obs_dim, h.info().action_dims), (2, 1, 1));
    assert_eq!(h.info().name, "toy");
}

#[test]
fn launch_failures_name_the_cause() {
    let e = PluginHandle::launch(&plugin(&["toy", "--exit-immediately"]), T).unwrap_err();
    assert!(e.to_string().contains("process terminated before hello"), "{e}");
    let e = PluginHandle::launch(&plugin(&["toy", "--version-override", "2"]), T).unwrap_err();
    assert!(e.to_string().contains("unsupported version"), "{e}");
    let e = PluginHandle::launch(&["/nonexistent/plugin".to_string()], T).unwrap_err();
    assert!(matches!(e, Error::Launch(_)));
    assert!(PluginHandle::launch(&[], T).is_err());
    let e = PluginHandle::launch(&["sh".into(), "-c".into(), "echo '{\"type\":\"shutdown\"}'; sleep 5".into()], T)
        .unwrap_err();
    assert!(e.to_string().contains("malformed hello"), "{e}");
    let e = PluginHandle::launch(&["sleep".into(), "5".into()], Duration::from_millis(200)).unwrap_err();
    assert!(e.to_string().contains("no hello"), "{e}");
}

#[test]
fn plugin_matches_builtin_toy() {
    let h = PluginHandle::launch(&plugin(&["toy"]), T).unwrap();
    let reqs = toy_requests(1000, 11);
    assert_matches_builtin(&reqs, h.simulate_batch(&reqs, T).unwrap());
}

#[test]
fn shuffled_responses_keep_request_order() {
    let h = PluginHandle::launch(&plugin(&["toy", "--shuffle"]), T).unwrap();
    for offset in 0..3 {
        let reqs = toy_requests(300, offset);
        assert_matches_builtin(&reqs, h.simulate_batch(&reqs, T).unwrap());
    }
}

#[test]
fn concurrent_batches_route_correctly() {
    let h = Arc::new(PluginHandle::launch(&plugin(&["toy", "--shuffle"]), T).unwrap());
    let workers: Vec<_> = (0..4u64)
        .map(|w| {
            let h = h.clone();
            thread::spawn(move || {
                for k in 0..5 {
                    let reqs = toy_requests(50, 1000 * w + k);
                    assert_matches_builtin(&reqs, h.simulate_batch(&reqs, T).unwrap());
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
}

#[test]
fn killed_plugin_fails_pending_requests() {
    let h = PluginHandle::launch(&plugin(&["toy", "--exit-after", "10"]), T).unwrap();
    let reqs = toy_requests(50, 0);
    match h.simulate_batch(&reqs, T) {
        Err(Error::Session { unfulfilled, .. }) => {
            assert_eq!(unfulfilled.len(), 40);
            assert_eq!(unfulfilled, (10..50).collect::<Vec<u64>>());
        }
        other => panic!("expected a session error, got {other:?}"),
    }
    assert!(matches!(h.simulate_batch(&reqs[..1], T), Err(Error::Session { .. })));
    h.shutdown(Duration::from_secs(2));
    assert_eq!(h.exit_code(), Some(3));
}

#[test]
fn shutdown_is_idempotent_and_final() {
    let h = PluginHandle::launch(&plugin(&["echo"]), T).unwrap();
    h.shutdown(Duration::from_secs(2));
    assert_eq!(h.state(), SessionState::Closed);
    assert_eq!(h.exit_code(), Some(0));
    h.shutdown(Duration::from_secs(2));
    assert_eq!(h.exit_code(), Some(0));
    assert!(h.simulate_batch(&[(vec![0.0, 0.0], vec![0.0], 1)], T).is_err());
}

#[test]
fn bad_request_gets_an_error_response() {
    let h = PluginHandle::launch(&plugin(&["toy"]), T).unwrap();
    let out = h
        .simulate_batch(&[(vec![0.0; 3], vec![1.0], 1), (vec![0.0, 0.0], vec![1.0], 1)], T)
        .unwrap();
    assert!(matches!(out[0], Err(Error::Simulator(_))));
    assert!(out[1].is_ok());
}

#[test]
fn plugin_simulator_reproduces_training_set() {
    let toy = ToySimulator::new();
    let grid = toy.spec().action_grid.clone();
    let p = PluginSimulator::launch(&plugin(&["toy"]), toy.spec().param_bounds.clone(), grid, T).unwrap();
    let prior = PriorDensity::Box(toy.spec().param_bounds.clone());
    let a = generate_training_set(&toy, &prior, 500, 42, 100).unwrap();
    let b = generate_training_set(&p, &prior, 500, 42, 100).unwrap();
    assert_eq!(a.samples, b.samples);
    p.shutdown();
}

#[test]
fn plugin_simulator_checks_dimensions() {
    let bounds = BoxPrior::cube(3, 0.0, 1.0).unwrap();
    let grid = ActionGrid::linspace(0.0, 1.0, 0.5).unwrap();
    let e = PluginSimulator::launch(&plugin(&["toy"]), bounds, grid.clone(), T).unwrap_err();
    assert!(matches!(e, Error::Launch(_)));

    let p = PluginSimulator::launch(&plugin(&["toy", "--wrong-obs-dim"]), BoxPrior::cube(2, -5.0, 5.0).unwrap(), grid, T)
        .unwrap();
    let a = p.spec().action_grid.get(0).unwrap().clone();
    assert!(matches!(p.simulate(&[0.0, 0.0], &a, 1), Err(Error::Simulator(_))));
}

#[test]
fn echo_plugin_passes_validation() {
    let r = validate_plugin(&plugin(&["echo"]), T, T);
    assert!(r.passed(), "{}", r.to_text());
    assert_eq!(r.checks.len(), 6);
    let r = validate_plugin(&plugin(&["toy", "--shuffle"]), T, T);
    assert!(r.passed(), "{}", r.to_text());
}

#[test]
fn faulty_plugins_fail_the_relevant_check() {
    let failed = |args: &[&str]| -> Vec<&'static str> {
        validate_plugin(&plugin(args), T, T)
            .checks
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    };
    assert_eq!(failed(&["echo", "--wrong-obs-dim"]), vec!["dimensions"]);
    assert!(failed(&["echo", "--nondeterministic"]).contains(&"determinism"));
    assert_eq!(failed(&["echo", "--exit-immediately"]).len(), 6);
}

#[test]
fn plugin_environment_hides_parameters() {
    use asbi::simproto::PluginEnvironment;
    use asbi::simulators::{Environment, SimulatedEnvironment};
    let toy = Arc::new(ToySimulator::new());
    let mut env = PluginEnvironment::launch(&plugin(&["toy", "--hidden", "-3,1"]), toy.spec().clone(), 5, T).unwrap();
    let mut direct = SimulatedEnvironment::new(toy.clone(), vec![-3.0, 1.0], 5).unwrap();
    for a in toy.spec().action_grid.iter() {
        assert_eq!(env.observe(a).unwrap(), direct.observe(a).unwrap());
    }
    let e = PluginEnvironment::launch(&plugin(&["toy"]), toy.spec().clone(), 5, T).unwrap_err();
    assert!(matches!(e, Error::Launch(_)));
}
