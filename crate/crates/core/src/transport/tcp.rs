//! Socket links. Frame layout, little-endian: `step: u64`, `count: u64`, then
//! `count` `f64` values.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use super::{Endpoint, Inbox, Message, NetModel, Outbox, TransportError};
use crate::partition::PeerList;

/// Upper bound on values per frame; larger counts are treated as corruption.
const MAX_FRAME_VALUES: u64 = 1 << 28;

pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 8 * msg.values.len());
    buf.extend_from_slice(&msg.step.to_le_bytes());
    buf.extend_from_slice(&(msg.values.len() as u64).to_le_bytes());
    for v in &msg.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg))?;
    w.flush()
}

/// `Ok(None)` on a clean end of stream before a frame starts.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    let mut head = [0u8; 16];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..])? {
            0 if got == 0 => return Ok(None),
            0 => {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "truncated frame header",
                ))
            }
            n => got += n,
        }
    }
    let step = u64::from_le_bytes(head[..8].try_into().unwrap());
    let count = u64::from_le_bytes(head[8..].try_into().unwrap());
    if count > MAX_FRAME_VALUES {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {count} values"),
        ));
    }
    let mut body = vec![0u8; count as usize * 8];
    r.read_exact(&mut body)?;
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Some(Message { step, values }))
}

pub struct TcpOutbox {
    from: usize,
    to: usize,
    stream: TcpStream,
}

impl Outbox for TcpOutbox {
    fn post(&mut self, msg: Message) -> Result<(), TransportError> {
        write_frame(&mut self.stream, &msg).map_err(|_| TransportError::Disconnected {
            from: self.from,
            to: self.to,
        })
    }
}

/// Frames decoded by a background reader thread.
pub struct TcpInbox {
    from: usize,
    to: usize,
    rx: Receiver<io::Result<Message>>,
}

impl Inbox for TcpInbox {
    fn take(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(Ok(m)) => Ok(Some(m)),
            Ok(Err(e)) => Err(TransportError::Io(format!(
                "{} -> {}: {e}",
                self.from, self.to
            ))),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected {
                from: self.from,
                to: self.to,
            }),
        }
    }
}

/// Splits a connected stream into the outbox towards `peer` and the inbox
/// from it.
pub fn split(
    stream: TcpStream,
    me: usize,
    peer: usize,
) -> Result<(TcpOutbox, TcpInbox), TransportError> {
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let (tx, rx) = channel();
    std::thread::Builder::new()
        .name(format!("halo-rx-{peer}-{me}"))
        .spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        })?;
    Ok((
        TcpOutbox {
            from: me,
            to: peer,
            stream,
        },
        TcpInbox {
            from: peer,
            to: me,
            rx,
        },
    ))
}

/// Connects `me` to every peer in `peers`: lower ids are dialled, higher ids
/// are accepted on `listener`. Each dialler announces itself with its id as a
/// little-endian `u64`.
pub fn connect_mesh(
    me: usize,
    listener: &TcpListener,
    peers: &[(usize, SocketAddr)],
    timeout: Duration,
) -> Result<Vec<(usize, TcpStream)>, TransportError> {
    let deadline = Instant::now() + timeout;
    let mut out = Vec::with_capacity(peers.len());
    for &(peer, addr) in peers.iter().filter(|(p, _)| *p < me) {
        let mut stream = loop {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => break s,
                Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(5)),
                Err(_) => return Err(TransportError::Timeout { from: me, to: peer }),
            }
        };
        stream.write_all(&(me as u64).to_le_bytes())?;
        out.push((peer, stream));
    }
    let mut expected: Vec<usize> = peers.iter().map(|(p, _)| *p).filter(|&p| p > me).collect();
    listener.set_nonblocking(true)?;
    while !expected.is_empty() {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false)?;
                stream.set_read_timeout(Some(timeout))?;
                let mut id = [0u8; 8];
                stream.read_exact(&mut id)?;
                stream.set_read_timeout(None)?;
                let peer = u64::from_le_bytes(id) as usize;
                let pos = expected.iter().position(|&p| p == peer).ok_or_else(|| {
                    TransportError::Protocol(format!("unexpected peer {peer} at {me}"))
                })?;
                expected.swap_remove(pos);
                out.push((peer, stream));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(TransportError::Timeout {
                        from: expected[0],
                        to: me,
                    });
                }
                std::thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    out.sort_by_key(|(p, _)| *p);
    Ok(out)
}

/// Builds an endpoint whose links run over already connected `streams`.
pub fn endpoint(
    me: usize,
    sends: &[PeerList],
    recvs: &[PeerList],
    streams: Vec<(usize, TcpStream)>,
    net: NetModel,
    timeout: Duration,
) -> Result<Endpoint, TransportError> {
    let mut ep = Endpoint::new(me, net, timeout);
    for (peer, stream) in streams {
        let (outbox, inbox) = split(stream, me, peer)?;
        if let Some(s) = sends.iter().find(|s| s.peer == peer) {
            ep.add_send(peer, s.nodes.clone(), Box::new(outbox));
        }
        if let Some(r) = recvs.iter().find(|r| r.peer == peer) {
            ep.add_recv(peer, r.nodes.clone(), Box::new(inbox));
        }
    }
    Ok(ep)
}

/// Peers `me` shares a link with, given its lists.
pub fn linked_peers(sends: &[PeerList], recvs: &[PeerList]) -> Vec<usize> {
    let mut ids: Vec<usize> = sends.iter().chain(recvs).map(|p| p.peer).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// In-process endpoints wired over loopback sockets, one listener per worker.
pub fn loopback_endpoints(
    lists: &[(usize, &[PeerList], &[PeerList])],
    net: NetModel,
    timeout: Duration,
) -> Result<Vec<Endpoint>, TransportError> {
    super::check_symmetry(lists)?;
    let listeners: Vec<TcpListener> = lists
        .iter()
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<Result<_, _>>()?;
    let addrs: Vec<SocketAddr> = listeners
        .iter()
        .map(|l| l.local_addr())
        .collect::<Result<_, _>>()?;
    let handles: Vec<_> = lists
        .iter()
        .zip(listeners)
        .map(|(&(me, sends, recvs), listener)| {
            let peers: Vec<(usize, SocketAddr)> = linked_peers(sends, recvs)
                .into_iter()
                .map(|p| {
                    let idx = lists
                        .iter()
                        .position(|(id, _, _)| *id == p)
                        .expect("checked peer");
                    (p, addrs[idx])
                })
                .collect();
            let (sends, recvs) = (sends.to_vec(), recvs.to_vec());
            std::thread::spawn(move || -> Result<Endpoint, TransportError> {
                let streams = connect_mesh(me, &listener, &peers, timeout)?;
                endpoint(me, &sends, &recvs, streams, net, timeout)
            })
        })
        .collect();
    handles
        .into_iter()
        .map(|h| {
            h.join()
                .map_err(|_| TransportError::Protocol("mesh set-up panicked".into()))?
        })
        .collect()
}
