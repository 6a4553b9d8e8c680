use std::time::Duration;

use rand::Rng;

use super::client::{PluginHandle, PluginInfo};
use crate::seed::rng_for;
use crate::simulators::Observation;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }

    /// One `[PASS]`/`[FAIL]` line per check.
    pub fn to_text(&self) -> String {
        self.checks
            .iter()
            .map(|c| format!("[{}] {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
            .collect()
    }

    fn push(&mut self, name: &'static str, outcome: Result<String, String>) {
        let (passed, detail) = match outcome {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        self.checks.push(Check { name, passed, detail });
    }
}

const CHECKS: [&str; 6] = ["handshake", "dimensions", "determinism", "batch ordering", "error handling", "shutdown"];

type Request = (Vec<f64>, Vec<f64>, u64);

fn probe_requests(info: &PluginInfo, n: usize, stream: u64) -> Vec<Request> {
    let mut rng = rng_for(0xC0FF_EE00, &[stream]);
    (0..n)
        .map(|_| {
            (
                (0..info.param_dim).map(|_| rng.random_range(0.05..0.95)).collect(),
                (0..info.action_dims).map(|_| rng.random_range(0.0..1.0)).collect(),
                rng.random(),
            )
        })
        .collect()
}

fn run(h: &PluginHandle, reqs: &[Request], timeout: Duration) -> Result<Vec<Observation>, String> {
    let results = h.simulate_batch(reqs, timeout).map_err(|e| e.to_string())?;
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| format!("request {i}: {e}")))
        .collect()
}

fn bitwise_eq(a: &[Observation], b: &[Observation]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.valid == y.valid
                && x.values.len() == y.values.len()
                && x.values.iter().zip(&y.values).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

/// Runs handshake, dimension, determinism, ordering, error-handling and
/// shutdown checks against the plugin started by `command`.
pub fn validate_plugin(command: &[String], startup_timeout: Duration, request_timeout: Duration) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let h = match PluginHandle::launch(command, startup_timeout) {
        Ok(h) => h,
        Err(e) => {
            report.push("handshake", Err(e.to_string()));
            for name in &CHECKS[1..] {
                report.push(name, Err("skipped: no session".into()));
            }
            return report;
        }
    };
    let info = h.info().clone();
    report.push(
        "handshake",
        if info.param_dim > 0 && info.obs_dim > 0 && info.action_dims > 0 {
            Ok(format!(
                "{} (param_dim {}, action_dims {}, obs_dim {})",
                info.name, info.param_dim, info.action_dims, info.obs_dim
            ))
        } else {
            Err(format!("hello announced a zero dimension: {info:?}"))
        },
    );

    let probe = probe_requests(&info, 32, 0);
    let first = run(&h, &probe, request_timeout);
    report.push(
        "dimensions",
        first.as_ref().map_err(|e| e.clone()).and_then(|obs| {
            match obs.iter().position(|x| x.values.len() != info.obs_dim) {
                None => Ok(format!("{} responses of length {}", obs.len(), info.obs_dim)),
                Some(i) => Err(format!(
                    "response {i} has {} values, hello announced {}",
                    obs[i].values.len(),
                    info.obs_dim
                )),
            }
        }),
    );

    let determinism = (|| {
        let a = first.clone()?;
        let b = run(&h, &probe, request_timeout)?;
        if !bitwise_eq(&a, &b) {
            return Err("repeating a batch with the same seeds changed the observations".to_string());
        }
        let again = PluginHandle::launch(command, startup_timeout).map_err(|e| format!("relaunch: {e}"))?;
        let c = run(&again, &probe, request_timeout)?;
        again.shutdown(Duration::from_secs(2));
        if !bitwise_eq(&a, &c) {
            return Err("a restarted plugin produced different observations for the same seeds".to_string());
        }
        Ok(format!("{} seeded requests bitwise equal across repeats and restarts", a.len()))
    })();
    report.push("determinism", determinism);

    let ordering = (|| {
        let reqs = probe_requests(&info, 64, 1);
        let batch = run(&h, &reqs, request_timeout)?;
        let mut single = Vec::with_capacity(reqs.len());
        for r in &reqs {
            single.extend(run(&h, std::slice::from_ref(r), request_timeout)?);
        }
        if bitwise_eq(&batch, &single) {
            Ok(format!("{} pipelined responses matched to their requests", reqs.len()))
        } else {
            Err("pipelined batch differs from one-at-a-time requests".to_string())
        }
    })();
    report.push("batch ordering", ordering);

    let errors = (|| {
        let mut reqs = probe_requests(&info, 2, 2);
        reqs[0].0.push(0.5);
        let out = h.simulate_batch(&reqs, request_timeout).map_err(|e| e.to_string())?;
        match (&out[0], &out[1]) {
            (Err(_), Ok(_)) => Ok("bad request answered with an error; session survived".to_string()),
            (Ok(_), _) => Err("request with too many parameters was not rejected".to_string()),
            (_, Err(e)) => Err(format!("valid request after a bad one failed: {e}")),
        }
    })();
    report.push("error handling", errors);

    h.shutdown(Duration::from_secs(5));
    h.shutdown(Duration::from_secs(5));
    let after = h.simulate_batch(&probe[..1], request_timeout);
    report.push(
        "shutdown",
        match (h.exit_code(), after) {
            (Some(0), Err(_)) => Ok("clean exit with code 0; later requests rejected".to_string()),
            (code, Err(_)) => Err(format!("plugin exit code {code:?}")),
            (_, Ok(_)) => Err("request accepted after shutdown".to_string()),
        },
    );
    report
}
