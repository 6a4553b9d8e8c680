use std::io::{BufRead, Write};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;

use super::message::{Message, PROTOCOL_VERSION};
use crate::seed::rng_for;
use crate::simulators::{Action, Simulator};

/// Deliberate protocol faults, used to exercise the client and the
/// conformance suite.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Misbehavior {
    /// Answer buffered requests in a seeded random order.
    pub shuffle: bool,
    /// Stop serving after this many responses without a shutdown.
    pub exit_after: Option<usize>,
    /// Announce this protocol version instead of the supported one.
    pub version: Option<u32>,
    /// Append a spurious value to every observation.
    pub wrong_obs_dim: bool,
    /// Ignore the request seed for all but the first request.
    pub nondeterministic: bool,
}

/// Why [`serve`] returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeEnd {
    Shutdown,
    InputClosed,
    ExitAfter,
}

fn respond(sim: &dyn Simulator, id: u64, theta: Vec<f64>, values: Vec<f64>, seed: u64, faults: &Misbehavior) -> Message {
    let index = sim.spec().action_grid.find(&values).map_or(usize::MAX, |a| a.index);
    let action = Action { values, index };
    match sim.simulate(&theta, &action, seed) {
        Ok(mut x) => {
            if faults.wrong_obs_dim {
                x.values.push(0.0);
            }
            Message::SimulateResponse {
                id,
                observation: x.values,
                valid: x.valid,
            }
        }
        Err(e) => Message::Error {
            id: Some(id),
            message: e.to_string(),
        },
    }
}

/// Serves `sim` over line-delimited messages until shutdown or end of input.
pub fn serve<R, W>(sim: &dyn Simulator, input: R, output: W, faults: &Misbehavior) -> std::io::Result<ServeEnd>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    serve_impl(sim, None, input, output, faults)
}

/// Serves `sim` as a target environment: the parameters stay fixed at
/// `hidden`, the hello announces zero parameters, and requests carry an empty
/// `theta`.
pub fn serve_environment<R, W>(
    sim: &dyn Simulator,
    hidden: &[f64],
    input: R,
    output: W,
    faults: &Misbehavior,
) -> std::io::Result<ServeEnd>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    serve_impl(sim, Some(hidden), input, output, faults)
}

fn serve_impl<R, W>(
    sim: &dyn Simulator,
    hidden: Option<&[f64]>,
    input: R,
    mut output: W,
    faults: &Misbehavior,
) -> std::io::Result<ServeEnd>
where
    R: BufRead + Send + 'static,
    W: Write,
{
    let spec = sim.spec();
    let hello = Message::Hello {
        name: spec.name.clone(),
        param_dim: if hidden.is_some() { 0 } else { spec.param_dim },
        obs_dim: spec.obs_dim,
        action_dims: spec.action_grid.dim(),
        protocol_version: faults.version.unwrap_or(PROTOCOL_VERSION),
    };
    output.write_all(hello.to_line().as_bytes())?;
    output.flush()?;

    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        for line in input.lines() {
            match line {
                Ok(l) => {
                    if tx.send(l).is_err() {
                        return;
                    }
                }
                Err(_) => return,
            }
        }
    });

    let mut rng = rng_for(0x5EED, &[]);
    let mut held: Vec<Message> = Vec::new();
    let mut answered = 0usize;
    let mut requests = 0u64;
    let mut flush = |held: &mut Vec<Message>, output: &mut W, answered: &mut usize| -> std::io::Result<bool> {
        if faults.shuffle {
            held.shuffle(&mut rng);
        }
        for m in held.drain(..) {
            output.write_all(m.to_line().as_bytes())?;
            *answered += 1;
            if faults.exit_after.is_some_and(|n| *answered >= n) {
                output.flush()?;
                return Ok(true);
            }
        }
        output.flush()?;
        Ok(false)
    };
    loop {
        let line = if held.is_empty() {
            match rx.recv() {
                Ok(l) => l,
                Err(_) => return Ok(ServeEnd::InputClosed),
            }
        } else {
            // Keep buffering while the client is still writing a batch.
            match rx.recv_timeout(Duration::from_millis(if faults.shuffle { 20 } else { 0 })) {
                Ok(l) => l,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    if flush(&mut held, &mut output, &mut answered)? {
                        return Ok(ServeEnd::ExitAfter);
                    }
                    continue;
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    flush(&mut held, &mut output, &mut answered)?;
                    return Ok(ServeEnd::InputClosed);
                }
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Message::parse(&line) {
            Ok(Message::SimulateRequest { id, theta, action, seed }) => {
                let seed = if faults.nondeterministic && requests > 0 {
                    seed ^ requests
                } else {
                    seed
                };
                requests += 1;
                match hidden {
                    Some(h) if theta.is_empty() => respond(sim, id, h.to_vec(), action, seed, faults),
                    Some(_) => Message::Error {
                        id: Some(id),
                        message: "environment plugins take no parameters".into(),
                    },
                    None => respond(sim, id, theta, action, seed, faults),
                }
            }
            Ok(Message::Shutdown {}) => {
                flush(&mut held, &mut output, &mut answered)?;
                return Ok(ServeEnd::Shutdown);
            }
            Ok(other) => Message::Error {
                id: None,
                message: format!("unexpected message {other:?}"),
            },
            Err(e) => Message::Error {
                id: Message::salvage_id(&line),
                message: format!("malformed request: {e}"),
            },
        };
        held.push(reply);
        if !faults.shuffle && flush(&mut held, &mut output, &mut answered)? {
            return Ok(ServeEnd::ExitAfter);
        }
    }
}
