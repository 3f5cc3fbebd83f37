//! Multi-process runs over TCP.
//!
//! The root listens on a control address; each worker process connects,
//! announces the address it accepts peer links on, and receives its subdomain.
//! Control traffic is newline-delimited JSON; halo values travel on direct
//! worker-to-worker sockets.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::run::{assemble, prepare, Reducer};
use super::{
    run_worker, Control, Discretization, RunOptions, RunOutcome, SolverError, WorkerOutput,
    WorkerSetup,
};
use crate::transport::{tcp, NetModel, TransportError};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type")]
enum ToRoot {
    Hello { listen: SocketAddr },
    Arrive,
    Report { step: u64, sum: f64, rows: usize },
    Done { output: WorkerOutput<f64> },
    Failed { error: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type")]
enum ToWorker {
    Assign {
        setup: Box<WorkerSetup<f64>>,
        peers: Vec<(usize, SocketAddr)>,
        net: NetModel,
    },
    Go,
    Verdict {
        stop: bool,
    },
    Abort {
        reason: String,
    },
}

fn remote_err(e: impl std::fmt::Display) -> SolverError {
    SolverError::Remote(e.to_string())
}

fn send<M: Serialize>(w: &mut impl Write, msg: &M) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(msg).map_err(std::io::Error::other)?;
    line.push(b'\n');
    w.write_all(&line)?;
    w.flush()
}

fn recv<M: for<'de> Deserialize<'de>>(r: &mut impl BufRead) -> std::io::Result<Option<M>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    serde_json::from_str(&line)
        .map(Some)
        .map_err(std::io::Error::other)
}

enum Incoming {
    Msg(usize, ToRoot),
    Closed(usize, String),
}

/// Runs the root side: waits for one worker process per subdomain on
/// `listener`, drives the iteration and gathers the result.
pub fn serve(
    listener: &TcpListener,
    disc: &Discretization<f64>,
    opts: &RunOptions,
) -> Result<RunOutcome<f64>, SolverError> {
    let (plan, setups, dt) = prepare(disc, opts)?;
    let p = setups.len();

    listener.set_nonblocking(true).map_err(remote_err)?;
    let deadline = Instant::now() + opts.timeout;
    let mut conns: Vec<(TcpStream, SocketAddr)> = Vec::with_capacity(p);
    while conns.len() < p {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false).map_err(remote_err)?;
                stream
                    .set_read_timeout(Some(opts.timeout))
                    .map_err(remote_err)?;
                let mut reader = BufReader::new(stream.try_clone().map_err(remote_err)?);
                match recv::<ToRoot>(&mut reader).map_err(remote_err)? {
                    Some(ToRoot::Hello { listen }) => {
                        stream.set_read_timeout(None).map_err(remote_err)?;
                        conns.push((stream, listen));
                    }
                    other => return Err(remote_err(format!("expected hello, got {other:?}"))),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(remote_err(format!(
                        "only {} of {p} workers connected",
                        conns.len()
                    )));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(remote_err(e)),
        }
    }
    listener.set_nonblocking(false).map_err(remote_err)?;

    let addrs: Vec<SocketAddr> = conns.iter().map(|(_, a)| *a).collect();
    let (tx, rx) = channel();
    let mut writers = Vec::with_capacity(p);
    for (id, ((stream, _), setup)) in conns.into_iter().zip(setups).enumerate() {
        let peers = tcp::linked_peers(&setup.plan.sends, &setup.plan.recvs)
            .into_iter()
            .map(|q| (q, addrs[q]))
            .collect();
        let mut w = stream.try_clone().map_err(remote_err)?;
        send(
            &mut w,
            &ToWorker::Assign {
                setup: Box::new(setup),
                peers,
                net: opts.net,
            },
        )
        .map_err(remote_err)?;
        writers.push(w);
        let tx = tx.clone();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stream);
            loop {
                match recv::<ToRoot>(&mut reader) {
                    Ok(Some(msg)) => {
                        if tx.send(Incoming::Msg(id, msg)).is_err() {
                            return;
                        }
                    }
                    Ok(None) => {
                        let _ = tx.send(Incoming::Closed(id, "connection closed".into()));
                        return;
                    }
                    Err(e) => {
                        let _ = tx.send(Incoming::Closed(id, e.to_string()));
                        return;
                    }
                }
            }
        });
    }
    drop(tx);

    let broadcast = |writers: &mut Vec<TcpStream>, msg: &ToWorker| {
        for w in writers.iter_mut() {
            let _ = send(w, msg);
        }
    };
    let mut reducer = Reducer::new(p, opts.residual_tol.map(|t| t * disc.mean_abs_rhs()));
    let mut arrived = vec![false; p];
    let mut outputs = Vec::with_capacity(p);
    let mut finished = vec![false; p];
    let mut failure: Option<SolverError> = None;
    while finished.iter().any(|f| !f) {
        let event = match rx.recv_timeout(opts.timeout) {
            Ok(ev) => ev,
            Err(RecvTimeoutError::Timeout) => {
                let absent = (0..p).filter(|&i| !arrived[i] && !finished[i]).collect();
                failure.get_or_insert(SolverError::Transport {
                    worker: usize::MAX,
                    source: TransportError::BarrierTimeout { absent },
                });
                broadcast(
                    &mut writers,
                    &ToWorker::Abort {
                        reason: "root timed out".into(),
                    },
                );
                break;
            }
            Err(RecvTimeoutError::Disconnected) => break,
        };
        match event {
            Incoming::Msg(_, ToRoot::Hello { .. }) => {}
            Incoming::Msg(id, ToRoot::Arrive) => {
                arrived[id] = true;
                if failure.is_none() && arrived.iter().all(|&a| a) {
                    arrived.iter_mut().for_each(|a| *a = false);
                    broadcast(&mut writers, &ToWorker::Go);
                }
            }
            Incoming::Msg(id, ToRoot::Report { step, sum, rows }) => {
                if let Some(stop) = reducer.report(step, id, sum, rows) {
                    if failure.is_none() {
                        broadcast(&mut writers, &ToWorker::Verdict { stop });
                    }
                }
            }
            Incoming::Msg(id, ToRoot::Done { output }) => {
                finished[id] = true;
                outputs.push(output);
            }
            Incoming::Msg(id, ToRoot::Failed { error }) | Incoming::Closed(id, error) => {
                if finished[id] {
                    continue;
                }
                finished[id] = true;
                if failure.is_none() {
                    failure = Some(remote_err(format!("worker {id}: {error}")));
                    broadcast(
                        &mut writers,
                        &ToWorker::Abort {
                            reason: format!("worker {id} failed"),
                        },
                    );
                }
            }
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(assemble(disc, plan, outputs, reducer, dt))
}

struct RemoteControl {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    timeout: Duration,
}

impl RemoteControl {
    fn await_reply(&mut self) -> Result<ToWorker, TransportError> {
        self.reader.get_ref().set_read_timeout(Some(self.timeout))?;
        match recv::<ToWorker>(&mut self.reader) {
            Ok(Some(ToWorker::Abort { reason })) => Err(TransportError::Aborted(reason)),
            Ok(Some(msg)) => Ok(msg),
            Ok(None) => Err(TransportError::Disconnected {
                from: usize::MAX,
                to: usize::MAX,
            }),
            Err(e) => Err(e.into()),
        }
    }
}

impl Control for RemoteControl {
    fn barrier(&mut self) -> Result<(), TransportError> {
        send(&mut self.writer, &ToRoot::Arrive)?;
        match self.await_reply()? {
            ToWorker::Go => Ok(()),
            other => Err(TransportError::Protocol(format!(
                "expected go, got {other:?}"
            ))),
        }
    }

    fn report(&mut self, step: u64, sum: f64, rows: usize) -> Result<bool, TransportError> {
        send(&mut self.writer, &ToRoot::Report { step, sum, rows })?;
        match self.await_reply()? {
            ToWorker::Verdict { stop } => Ok(stop),
            other => Err(TransportError::Protocol(format!(
                "expected verdict, got {other:?}"
            ))),
        }
    }
}

/// Runs one worker process: connects to the root at `root`, takes a
/// subdomain and iterates until told to stop.
pub fn serve_worker(root: impl ToSocketAddrs, timeout: Duration) -> Result<usize, SolverError> {
    let deadline = Instant::now() + timeout;
    let stream = loop {
        match TcpStream::connect(&root) {
            Ok(s) => break s,
            Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(20)),
            Err(e) => return Err(remote_err(e)),
        }
    };
    let local_ip = stream.local_addr().map_err(remote_err)?.ip();
    let listener = TcpListener::bind((local_ip, 0)).map_err(remote_err)?;
    let mut writer = stream.try_clone().map_err(remote_err)?;
    let mut reader = BufReader::new(stream);
    send(
        &mut writer,
        &ToRoot::Hello {
            listen: listener.local_addr().map_err(remote_err)?,
        },
    )
    .map_err(remote_err)?;

    let (setup, peers, net) = match recv::<ToWorker>(&mut reader).map_err(remote_err)? {
        Some(ToWorker::Assign { setup, peers, net }) => (setup, peers, net),
        other => return Err(remote_err(format!("expected assignment, got {other:?}"))),
    };
    let id = setup.plan.id;
    let timeout = setup.config.timeout;
    let result = tcp::connect_mesh(id, &listener, &peers, timeout)
        .and_then(|streams| {
            tcp::endpoint(
                id,
                &setup.plan.sends,
                &setup.plan.recvs,
                streams,
                net,
                timeout,
            )
        })
        .map_err(|source| SolverError::Transport { worker: id, source })
        .and_then(|mut ep| {
            let mut ctl = RemoteControl {
                writer: writer.try_clone().map_err(remote_err)?,
                reader,
                timeout,
            };
            run_worker(&setup, &mut ep, &mut ctl)
        });
    match result {
        Ok(output) => {
            send(&mut writer, &ToRoot::Done { output }).map_err(remote_err)?;
            Ok(id)
        }
        Err(e) => {
            let _ = send(
                &mut writer,
                &ToRoot::Failed {
                    error: e.to_string(),
                },
            );
            Err(e)
        }
    }
}
