//! Line-delimited JSON protocol for simulators running as child processes.
//!
//! A plugin writes a `hello` line on startup, then answers each
//! `simulate_request` with a `simulate_response` or `error` carrying the same
//! id, in any order. Requests carry the noise seed; plugins derive their noise
//! from it with the recipe in [`crate::seed`]. `shutdown` ends the session.

mod client;
mod conformance;
mod message;
mod server;

pub use client::{PluginHandle, PluginInfo, SessionState};
pub use conformance::{validate_plugin, Check, ConformanceReport};
pub use message::{Message, PROTOCOL_VERSION};
pub use server::{serve, serve_environment, Misbehavior, ServeEnd};

use std::time::Duration;

use crate::density::BoxPrior;
use crate::error::{contract, Error, Result};
use crate::seed::SplitMix64;
use crate::simulators::{check_dims, Action, ActionGrid, Backend, Environment, Observation, Simulator, SimulatorSpec};

pub const DEFAULT_STARTUP_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

/// An external plugin used as a [`Simulator`].
///
/// The hello only carries dimensions, so the parameter box and action grid
/// come from the caller and are checked against it.
#[derive(Debug)]
pub struct PluginSimulator {
    handle: PluginHandle,
    spec: SimulatorSpec,
    pub request_timeout: Duration,
}

impl PluginSimulator {
    pub fn launch(
        command: &[String],
        param_bounds: BoxPrior,
        action_grid: ActionGrid,
        startup_timeout: Duration,
    ) -> Result<Self> {
        let handle = PluginHandle::launch(command, startup_timeout)?;
        let info = handle.info().clone();
        if info.param_dim != param_bounds.dim() || info.action_dims != action_grid.dim() || info.obs_dim == 0 {
            return Err(Error::Launch(format!(
                "plugin {} announced {} parameters, {}-dimensional actions and {} outputs; the configuration has {} and {}",
                info.name,
                info.param_dim,
                info.action_dims,
                info.obs_dim,
                param_bounds.dim(),
                action_grid.dim()
            )));
        }
        let spec = SimulatorSpec {
            name: info.name.clone(),
            param_dim: info.param_dim,
            param_bounds,
            action_grid,
            obs_dim: info.obs_dim,
            backend: Backend::External {
                command: command.to_vec(),
            },
        };
        Ok(Self {
            handle,
            spec,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
        })
    }

    pub fn handle(&self) -> &PluginHandle {
        &self.handle
    }

    pub fn shutdown(&self) {
        self.handle.shutdown(Duration::from_secs(2));
    }
}

impl Simulator for PluginSimulator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        self.simulate_batch(&[(theta.to_vec(), action.clone(), seed)])
            .pop()
            .expect("one result per request")
    }

    fn simulate_batch(&self, requests: &[(Vec<f64>, Action, u64)]) -> Vec<Result<Observation>> {
        let mut out: Vec<Option<Result<Observation>>> = Vec::with_capacity(requests.len());
        let mut wire = Vec::new();
        let mut slots = Vec::new();
        for (i, (t, a, s)) in requests.iter().enumerate() {
            match client::check_request(self.handle.info(), t, &a.values) {
                Ok(()) => {
                    wire.push((t.clone(), a.values.clone(), *s));
                    slots.push(i);
                    out.push(None);
                }
                Err(e) => out.push(Some(Err(e))),
            }
        }
        match self.handle.simulate_batch(&wire, self.request_timeout) {
            Ok(results) => {
                for (i, r) in slots.into_iter().zip(results) {
                    let want = self.obs_dim_for(&requests[i].1);
                    out[i] = Some(r.and_then(|x| {
                        if x.values.len() == want {
                            Ok(x)
                        } else {
                            Err(Error::Simulator(format!(
                                "plugin returned {} values, expected {want}",
                                x.values.len()
                            )))
                        }
                    }));
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for i in slots {
                    out[i] = Some(Err(Error::Simulator(msg.clone())));
                }
            }
        }
        out.into_iter().map(|o| o.expect("every slot filled")).collect()
    }
}

/// An external system reached through the plugin protocol. Its hello must
/// announce zero parameters; requests carry an empty `theta` and a seed from
/// the environment's own stream.
#[derive(Debug)]
pub struct PluginEnvironment {
    handle: PluginHandle,
    spec: SimulatorSpec,
    seed: u64,
    calls: u64,
    pub request_timeout: Duration,
}

impl PluginEnvironment {
    /// `spec` is the simulator the inference runs against; the plugin must
    /// match its action and observation sizes.
    pub fn launch(command: &[String], spec: SimulatorSpec, seed: u64, startup_timeout: Duration) -> Result<Self> {
        let handle = PluginHandle::launch(command, startup_timeout)?;
        let info = handle.info();
        if info.param_dim != 0 || info.action_dims != spec.action_grid.dim() || info.obs_dim != spec.obs_dim {
            return Err(Error::Launch(format!(
                "environment plugin {} announced {} parameters, {}-dimensional actions and {} outputs; expected 0, {} and {}",
                info.name,
                info.param_dim,
                info.action_dims,
                info.obs_dim,
                spec.action_grid.dim(),
                spec.obs_dim
            )));
        }
        Ok(Self {
            handle,
            spec,
            seed,
            calls: 0,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
        })
    }

    pub fn shutdown(&self) {
        self.handle.shutdown(Duration::from_secs(2));
    }
}

impl Environment for PluginEnvironment {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn observe(&mut self, action: &Action) -> Result<Observation> {
        if !self.spec.action_grid.contains(action) {
            return Err(contract(format!("action {:?} is not on the grid", action.values)));
        }
        let seed = crate::seed::derive_seed(self.seed, &[self.calls]);
        self.calls += 1;
        let mut out = self
            .handle
            .simulate_batch(&[(Vec::new(), action.values.clone(), seed)], self.request_timeout)
            .map_err(|e| Error::Environment(e.to_string()))?;
        out.pop()
            .expect("one result per request")
            .map_err(|e| Error::Environment(e.to_string()))
    }
}

/// Test double: returns `θ ⊕ ξ` followed by one standard-normal draw from the
/// seed.
#[derive(Debug, Clone)]
pub struct EchoSimulator {
    spec: SimulatorSpec,
}

impl Default for EchoSimulator {
    fn default() -> Self {
        Self {
            spec: SimulatorSpec {
                name: "echo".into(),
                param_dim: 2,
                param_bounds: BoxPrior::cube(2, -1.0, 1.0).expect("static bounds"),
                action_grid: ActionGrid::linspace(-1.0, 1.0, 0.5).expect("static grid"),
                obs_dim: 4,
                backend: Backend::External {
                    command: vec!["asbi-plugin".into(), "echo".into()],
                },
            },
        }
    }
}

impl Simulator for EchoSimulator {
    fn spec(&self) -> &SimulatorSpec {
        &self.spec
    }

    fn simulate(&self, theta: &[f64], action: &Action, seed: u64) -> Result<Observation> {
        check_dims(&self.spec, theta, action)?;
        if theta.iter().chain(&action.values).any(|v| !v.is_finite()) {
            return Err(contract("echo inputs must be finite"));
        }
        let mut v = theta.to_vec();
        v.extend_from_slice(&action.values);
        v.push(SplitMix64::new(seed).next_normal());
        Ok(Observation::valid(v))
    }
}
