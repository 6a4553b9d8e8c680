use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::message::{Message, PROTOCOL_VERSION};
use crate::error::{contract, Error, Result};
use crate::simulators::Observation;

/// Dimensions announced by a plugin's hello.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginInfo {
    pub name: String,
    pub param_dim: usize,
    pub obs_dim: usize,
    pub action_dims: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Launched,
    Ready,
    Closed,
}

type Reply = (usize, Result<Observation>);

struct Pending {
    slots: HashMap<u64, (usize, Sender<Reply>)>,
    /// Set once the output stream ended; later batches fail immediately.
    closed: Option<String>,
}

struct Writer {
    stdin: Option<ChildStdin>,
    next_id: u64,
}

/// A running plugin process.
///
/// Batches may be submitted from several threads: writes are serialized and a
/// reader thread routes responses to their callers by id.
pub struct PluginHandle {
    command: Vec<String>,
    info: PluginInfo,
    writer: Mutex<Writer>,
    pending: Arc<Mutex<Pending>>,
    child: Mutex<Child>,
    state: Mutex<SessionState>,
    exit_code: Mutex<Option<i32>>,
    stray: Arc<Mutex<Vec<Message>>>,
}

impl std::fmt::Debug for PluginHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginHandle")
            .field("command", &self.command)
            .field("info", &self.info)
            .field("state", &self.state())
            .finish_non_exhaustive()
    }
}

enum Event {
    Line(String),
    Eof(Option<String>),
}

fn fail_all(pending: &Mutex<Pending>, why: &str) {
    let mut p = pending.lock().unwrap();
    p.closed = Some(why.to_string());
    let mut ids: Vec<u64> = p.slots.keys().copied().collect();
    ids.sort_unstable();
    for (slot, tx) in p.slots.drain().map(|(_, v)| v) {
        let _ = tx.send((
            slot,
            Err(Error::Session {
                message: why.to_string(),
                unfulfilled: ids.clone(),
            }),
        ));
    }
}

fn route(pending: &Mutex<Pending>, stray: &Mutex<Vec<Message>>, msg: Message) {
    let (id, reply) = match msg {
        Message::SimulateResponse { id, observation, valid } => (
            id,
            Ok(Observation {
                values: observation,
                valid,
            }),
        ),
        Message::Error { id: Some(id), message } => (id, Err(Error::Simulator(format!("plugin error: {message}")))),
        other => {
            log::warn!("unsolicited plugin message {other:?}");
            stray.lock().unwrap().push(other);
            return;
        }
    };
    match pending.lock().unwrap().slots.remove(&id) {
        Some((slot, tx)) => {
            let _ = tx.send((slot, reply));
        }
        None => log::warn!("plugin answered unknown request id {id}"),
    }
}

impl PluginHandle {
    /// Starts `command` and waits up to `startup_timeout` for its hello.
    pub fn launch(command: &[String], startup_timeout: Duration) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Launch("empty plugin command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Launch(format!("cannot start {program:?}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");

        let (tx, rx) = mpsc::channel::<Event>();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        let _ = tx.send(Event::Eof(None));
                        return;
                    }
                    Ok(_) => {
                        if tx.send(Event::Line(line)).is_err() {
                            return;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Event::Eof(Some(e.to_string())));
                        return;
                    }
                }
            }
        });

        let kill = |child: &mut Child, why: String| {
            let _ = child.kill();
            let _ = child.wait();
            Error::Launch(why)
        };
        let info = loop {
            match rx.recv_timeout(startup_timeout) {
                Ok(Event::Line(l)) if l.trim().is_empty() => continue,
                Ok(Event::Line(l)) => match Message::parse(&l) {
                    Ok(Message::Hello {
                        name,
                        param_dim,
                        obs_dim,
                        action_dims,
                        protocol_version,
                    }) => {
                        if protocol_version != PROTOCOL_VERSION {
                            return Err(kill(
                                &mut child,
                                format!("unsupported version {protocol_version} (expected {PROTOCOL_VERSION})"),
                            ));
                        }
                        break PluginInfo {
                            name,
                            param_dim,
                            obs_dim,
                            action_dims,
                        };
                    }
                    Ok(other) => return Err(kill(&mut child, format!("malformed hello: expected hello, got {other:?}"))),
                    Err(e) => return Err(kill(&mut child, format!("malformed hello: {e}: {}", l.trim_end()))),
                },
                Ok(Event::Eof(_)) | Err(RecvTimeoutError::Disconnected) => {
                    let code = child.wait().ok().and_then(|s| s.code());
                    return Err(Error::Launch(format!("process terminated before hello (exit code {code:?})")));
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(kill(&mut child, format!("no hello within {startup_timeout:?}")));
                }
            }
        };

        let pending = Arc::new(Mutex::new(Pending {
            slots: HashMap::new(),
            closed: None,
        }));
        let stray = Arc::new(Mutex::new(Vec::new()));
        {
            let pending = pending.clone();
            let stray = stray.clone();
            thread::spawn(move || {
                for ev in rx {
                    match ev {
                        Event::Line(l) if l.trim().is_empty() => {}
                        Event::Line(l) => match Message::parse(&l) {
                            Ok(m) => route(&pending, &stray, m),
                            Err(e) => log::warn!("unparseable plugin line ({e}): {}", l.trim_end()),
                        },
                        Event::Eof(err) => {
                            fail_all(&pending, &err.unwrap_or_else(|| "plugin output stream closed".into()));
                            return;
                        }
                    }
                }
            });
        }

        Ok(Self {
            command: command.to_vec(),
            info,
            writer: Mutex::new(Writer { stdin, next_id: 0 }),
            pending,
            child: Mutex::new(child),
            state: Mutex::new(SessionState::Ready),
            exit_code: Mutex::new(None),
            stray,
        })
    }

    pub fn info(&self) -> &PluginInfo {
        &self.info
    }

    pub fn command(&self) -> &[String] {
        &self.command
    }

    pub fn state(&self) -> SessionState {
        *self.state.lock().unwrap()
    }

    /// Exit code of the child once it has been reaped.
    pub fn exit_code(&self) -> Option<i32> {
        *self.exit_code.lock().unwrap()
    }

    /// Messages that matched no request (stray hellos, errors without id).
    pub fn stray_messages(&self) -> Vec<Message> {
        self.stray.lock().unwrap().clone()
    }

    /// Sends every request, then waits up to `timeout` for all answers.
    /// Results follow request order. A per-request plugin error fills only
    /// its slot; losing the session fails the whole batch.
    pub fn simulate_batch(
        &self,
        requests: &[(Vec<f64>, Vec<f64>, u64)],
        timeout: Duration,
    ) -> Result<Vec<Result<Observation>>> {
        if requests.is_empty() {
            return Ok(Vec::new());
        }
        let (tx, rx) = mpsc::channel::<Reply>();
        let ids: Vec<u64> = {
            let mut w = self.writer.lock().unwrap();
            if self.state() != SessionState::Ready {
                return Err(Error::Session {
                    message: "session is shut down".into(),
                    unfulfilled: Vec::new(),
                });
            }
            let first = w.next_id;
            w.next_id += requests.len() as u64;
            let ids: Vec<u64> = (first..w.next_id).collect();
            {
                let mut p = self.pending.lock().unwrap();
                if let Some(why) = &p.closed {
                    return Err(Error::Session {
                        message: why.clone(),
                        unfulfilled: ids,
                    });
                }
                for (slot, id) in ids.iter().enumerate() {
                    p.slots.insert(*id, (slot, tx.clone()));
                }
            }
            let mut buf = String::new();
            for (id, (theta, action, seed)) in ids.iter().zip(requests) {
                buf.push_str(
                    &Message::SimulateRequest {
                        id: *id,
                        theta: theta.clone(),
                        action: action.clone(),
                        seed: *seed,
                    }
                    .to_line(),
                );
            }
            let sent = match w.stdin.as_mut() {
                Some(s) => s.write_all(buf.as_bytes()).and_then(|_| s.flush()),
                None => Err(std::io::Error::other("plugin input is closed")),
            };
            if let Err(e) = sent {
                self.forget(&ids);
                return Err(Error::Session {
                    message: format!("cannot write to plugin: {e}"),
                    unfulfilled: ids,
                });
            }
            ids
        };
        drop(tx);
        self.collect(&ids, rx, timeout)
    }

    fn forget(&self, ids: &[u64]) {
        let mut p = self.pending.lock().unwrap();
        for id in ids {
            p.slots.remove(id);
        }
    }

    fn collect(&self, ids: &[u64], rx: Receiver<Reply>, timeout: Duration) -> Result<Vec<Result<Observation>>> {
        let deadline = Instant::now() + timeout;
        let mut out: Vec<Option<Result<Observation>>> = (0..ids.len()).map(|_| None).collect();
        let mut got = 0;
        while got < ids.len() {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok((_, Err(Error::Session { message, .. }))) => {
                    let unfulfilled = ids.iter().zip(&out).filter(|(_, o)| o.is_none()).map(|(i, _)| *i).collect();
                    self.forget(ids);
                    return Err(Error::Session { message, unfulfilled });
                }
                Ok((slot, r)) => {
                    if out[slot].is_none() {
                        got += 1;
                    }
                    out[slot] = Some(r);
                }
                Err(_) => {
                    let unfulfilled = ids.iter().zip(&out).filter(|(_, o)| o.is_none()).map(|(i, _)| *i).collect();
                    self.forget(ids);
                    return Err(Error::Session {
                        message: format!("no response within {timeout:?}"),
                        unfulfilled,
                    });
                }
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every slot answered")).collect())
    }

    /// Sends shutdown, waits up to `grace` for the child to exit, then kills
    /// it. Later calls do nothing.
    pub fn shutdown(&self, grace: Duration) {
        let mut w = self.writer.lock().unwrap();
        {
            let mut st = self.state.lock().unwrap();
            if *st == SessionState::Closed {
                return;
            }
            *st = SessionState::Closed;
        }
        if let Some(mut stdin) = w.stdin.take() {
            let _ = stdin.write_all(Message::Shutdown {}.to_line().as_bytes());
            let _ = stdin.flush();
        }
        let mut child = self.child.lock().unwrap();
        let deadline = Instant::now() + grace;
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(5)),
                Ok(None) => {
                    log::warn!("plugin {:?} ignored shutdown; killing it", self.command);
                    let _ = child.kill();
                    break child.wait().ok();
                }
                Err(e) => {
                    log::warn!("cannot wait for plugin: {e}");
                    break None;
                }
            }
        };
        *self.exit_code.lock().unwrap() = status.and_then(|s| s.code());
        fail_all(&self.pending, "session is shut down");
    }
}

impl Drop for PluginHandle {
    fn drop(&mut self) {
        self.shutdown(Duration::from_secs(2));
    }
}

/// Check that a request is well formed before it reaches the wire.
pub(crate) fn check_request(info: &PluginInfo, theta: &[f64], action: &[f64]) -> Result<()> {
    if theta.len() != info.param_dim || action.len() != info.action_dims {
        return Err(contract(format!(
            "plugin {} expects {} parameters and {}-dimensional actions",
            info.name, info.param_dim, info.action_dims
        )));
    }
    Ok(())
}
