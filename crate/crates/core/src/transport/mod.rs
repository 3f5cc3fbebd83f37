//! Halo exchange between subdomain workers.
//!
//! An [`Endpoint`] owns one worker's links to its peers. [`Endpoint::exchange`]
//! posts every outgoing message, then blocks until every incoming one has been
//! unpacked into the halo slots, and reports how long that took. Links are
//! either in-process channels ([`inproc`]) or loopback/remote TCP sockets
//! ([`tcp`]); both carry the same [`Message`].
//!
//! With a [`NetModel`] enabled the reported communication time is the
//! first-order network cost `lambda + D / B` of the exchange instead of the
//! measured wall time; the data itself still moves through the real links.

mod barrier;
pub mod inproc;
pub mod tcp;

pub use barrier::SyncBarrier;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::PeerList;
use crate::scalar::Real;

/// Bytes per exchanged value on every link.
pub const VALUE_BYTES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("link {from} -> {to} disconnected")]
    Disconnected { from: usize, to: usize },
    #[error("timed out waiting for {from} -> {to}")]
    Timeout { from: usize, to: usize },
    #[error("barrier timed out; absent workers: {absent:?}")]
    BarrierTimeout { absent: Vec<usize> },
    #[error("barrier aborted: {0}")]
    Aborted(String),
    #[error("contract violation on {from} -> {to}: {detail}")]
    Contract {
        from: usize,
        to: usize,
        detail: String,
    },
    #[error("i/o: {0}")]
    Io(String),
    #[error("protocol: {0}")]
    Protocol(String),
}

impl From<std::io::Error> for TransportError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// One halo message: the sender's step and the values in send-list order.
#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub step: u64,
    pub values: Vec<f64>,
}

pub trait Outbox: Send {
    fn post(&mut self, msg: Message) -> Result<(), TransportError>;
}

pub trait Inbox: Send {
    /// `Ok(None)` on timeout, `Err` when the link is gone.
    fn take(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError>;
}

/// First-order link model `t = latency + bytes / bandwidth`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetModel {
    /// Seconds.
    pub latency: f64,
    /// Bytes per second.
    pub bandwidth: f64,
    pub enabled: bool,
}

impl Default for NetModel {
    fn default() -> Self {
        Self::disabled()
    }
}

impl NetModel {
    pub fn disabled() -> Self {
        Self {
            latency: 0.0,
            bandwidth: 0.0,
            enabled: false,
        }
    }

    pub fn simulated(latency: f64, bandwidth: f64) -> Result<Self, TransportError> {
        if !(latency >= 0.0) || !(bandwidth > 0.0) {
            return Err(TransportError::Protocol(format!(
                "invalid network model: latency {latency}, bandwidth {bandwidth}"
            )));
        }
        Ok(Self {
            latency,
            bandwidth,
            enabled: true,
        })
    }

    /// Seconds to move `bytes` over one link; zero when disabled.
    pub fn simulate_cost(&self, bytes: usize) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.latency + bytes as f64 / self.bandwidth
    }
}

/// Per-step timing of one worker, in seconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: u64,
    pub subdomain: usize,
    pub t_compute: f64,
    pub t_comm: f64,
}

/// Result of one [`Endpoint::exchange`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExchangeStats {
    /// Seconds; modeled when the endpoint's [`NetModel`] is enabled.
    pub elapsed: f64,
    pub wall: f64,
    pub bytes_sent: usize,
    pub max_message_bytes: usize,
}

struct SendLink {
    peer: usize,
    slots: Vec<usize>,
    outbox: Box<dyn Outbox>,
}

struct RecvLink {
    peer: usize,
    slots: Vec<usize>,
    inbox: Box<dyn Inbox>,
}

/// One worker's side of the halo exchange.
pub struct Endpoint {
    id: usize,
    net: NetModel,
    timeout: Duration,
    sends: Vec<SendLink>,
    recvs: Vec<RecvLink>,
}

impl Endpoint {
    pub fn new(id: usize, net: NetModel, timeout: Duration) -> Self {
        Self {
            id,
            net,
            timeout,
            sends: Vec::new(),
            recvs: Vec::new(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn net(&self) -> NetModel {
        self.net
    }

    /// Values at local indices `slots` go to `peer` every exchange.
    pub fn add_send(&mut self, peer: usize, slots: Vec<usize>, outbox: Box<dyn Outbox>) {
        self.sends.push(SendLink {
            peer,
            slots,
            outbox,
        });
    }

    /// Values from `peer` land in local indices `slots`.
    pub fn add_recv(&mut self, peer: usize, slots: Vec<usize>, inbox: Box<dyn Inbox>) {
        self.recvs.push(RecvLink { peer, slots, inbox });
    }

    pub fn peer_count(&self) -> usize {
        let mut ids: Vec<usize> = self
            .sends
            .iter()
            .map(|l| l.peer)
            .chain(self.recvs.iter().map(|l| l.peer))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Posts all sends, then waits for all receives. Owned slots are only read.
    ///
    /// With the network model enabled, messages to and from distinct peers are
    /// concurrent, each taking `latency + bytes / bandwidth`; the call does not
    /// return before the slowest of them would have completed, and reports
    /// that modeled time as `elapsed`.
    pub fn exchange<T: Real>(
        &mut self,
        step: u64,
        field: &mut [T],
    ) -> Result<ExchangeStats, TransportError> {
        let start = Instant::now();
        let mut stats = ExchangeStats::default();
        let mut modeled: f64 = 0.0;
        for link in &mut self.sends {
            let values: Vec<f64> = link.slots.iter().map(|&s| field[s].as_f64()).collect();
            let bytes = values.len() * VALUE_BYTES;
            stats.bytes_sent += bytes;
            stats.max_message_bytes = stats.max_message_bytes.max(bytes);
            modeled = modeled.max(self.net.simulate_cost(bytes));
            link.outbox.post(Message { step, values })?;
        }
        for link in &mut self.recvs {
            let msg = link
                .inbox
                .take(self.timeout)?
                .ok_or(TransportError::Timeout {
                    from: link.peer,
                    to: self.id,
                })?;
            if msg.step != step || msg.values.len() != link.slots.len() {
                return Err(TransportError::Contract {
                    from: link.peer,
                    to: self.id,
                    detail: format!(
                        "expected step {step} with {} values, got step {} with {}",
                        link.slots.len(),
                        msg.step,
                        msg.values.len()
                    ),
                });
            }
            let bytes = msg.values.len() * VALUE_BYTES;
            stats.max_message_bytes = stats.max_message_bytes.max(bytes);
            modeled = modeled.max(self.net.simulate_cost(bytes));
            for (&slot, &v) in link.slots.iter().zip(&msg.values) {
                field[slot] = T::lit(v);
            }
        }
        if self.net.enabled {
            // hold completion until the modeled transfer time has passed
            let target = Duration::from_secs_f64(modeled);
            let spent = start.elapsed();
            if spent < target {
                std::thread::sleep(target - spent);
            }
        }
        stats.wall = start.elapsed().as_secs_f64();
        stats.elapsed = if self.net.enabled {
            modeled
        } else {
            stats.wall
        };
        Ok(stats)
    }
}

/// Checks that `sends` of every plan match the peers' `recvs` element for
/// element.
pub fn check_symmetry(lists: &[(usize, &[PeerList], &[PeerList])]) -> Result<(), TransportError> {
    for &(s, sends, _) in lists {
        for out in sends {
            let (_, _, peer_recvs) = lists.iter().find(|(id, _, _)| *id == out.peer).ok_or(
                TransportError::Contract {
                    from: s,
                    to: out.peer,
                    detail: "unknown peer".into(),
                },
            )?;
            let back = peer_recvs.iter().find(|r| r.peer == s);
            if back.map(|b| b.nodes.len()) != Some(out.nodes.len()) {
                return Err(TransportError::Contract {
                    from: s,
                    to: out.peer,
                    detail: "send and receive buffer sizes differ".into(),
                });
            }
        }
    }
    Ok(())
}

/// CPU time consumed by the calling thread. Falls back to a process-wide wall
/// clock where per-thread clocks are unavailable.
pub fn thread_cpu_time() -> Duration {
    #[cfg(unix)]
    {
        let mut ts = libc::timespec {
            tv_sec: 0,
            tv_nsec: 0,
        };
        // SAFETY: `ts` is a valid, writable timespec.
        let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
        if rc == 0 {
            return Duration::new(ts.tv_sec as u64, ts.tv_nsec as u32);
        }
    }
    static EPOCH: std::sync::OnceLock<Instant> = std::sync::OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_model() {
        let m = NetModel::simulated(0.0, 1e9).unwrap();
        assert!((m.simulate_cost(1_000_000) - 1e-3).abs() < 1e-15);
        let m = NetModel::simulated(0.21e-3, 1e9).unwrap();
        assert_eq!(m.simulate_cost(0), 0.21e-3);
        assert!((m.simulate_cost(100_000) - 0.31e-3).abs() < 1e-15);
        assert!(NetModel::simulated(-1.0, 1e9).is_err());
        assert!(NetModel::simulated(0.0, 0.0).is_err());
    }

    #[test]
    fn cpu_clock_advances() {
        let a = thread_cpu_time();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = x.wrapping_add(i * i);
        }
        std::hint::black_box(x);
        assert!(thread_cpu_time() > a);
    }
}
