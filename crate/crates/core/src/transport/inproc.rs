//! Channel-backed links between workers of one process.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::{check_symmetry, Endpoint, Inbox, Message, NetModel, Outbox, TransportError};
use crate::partition::PeerList;

pub struct ChannelOutbox {
    from: usize,
    to: usize,
    tx: Sender<Message>,
}

impl Outbox for ChannelOutbox {
    fn post(&mut self, msg: Message) -> Result<(), TransportError> {
        self.tx.send(msg).map_err(|_| TransportError::Disconnected {
            from: self.from,
            to: self.to,
        })
    }
}

pub struct ChannelInbox {
    from: usize,
    to: usize,
    rx: Receiver<Message>,
}

impl Inbox for ChannelInbox {
    fn take(&mut self, timeout: Duration) -> Result<Option<Message>, TransportError> {
        match self.rx.recv_timeout(timeout) {
            Ok(m) => Ok(Some(m)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Disconnected {
                from: self.from,
                to: self.to,
            }),
        }
    }
}

/// A connected `from -> to` channel pair.
pub fn link(from: usize, to: usize) -> (ChannelOutbox, ChannelInbox) {
    let (tx, rx) = channel();
    (
        ChannelOutbox { from, to, tx },
        ChannelInbox { from, to, rx },
    )
}

/// One endpoint per `(id, sends, recvs)` entry, wired with channels. Lists
/// hold local slot indices; endpoints are returned in input order.
pub fn endpoints(
    lists: &[(usize, &[PeerList], &[PeerList])],
    net: NetModel,
    timeout: Duration,
) -> Result<Vec<Endpoint>, TransportError> {
    check_symmetry(lists)?;
    let mut eps: Vec<Endpoint> = lists
        .iter()
        .map(|(id, _, _)| Endpoint::new(*id, net, timeout))
        .collect();
    for (si, &(s, sends, _)) in lists.iter().enumerate() {
        for out in sends {
            let ti = lists
                .iter()
                .position(|(id, _, _)| *id == out.peer)
                .expect("checked peer");
            let back = lists[ti]
                .2
                .iter()
                .find(|r| r.peer == s)
                .expect("checked symmetry");
            let (tx, rx) = link(s, out.peer);
            eps[si].add_send(out.peer, out.nodes.clone(), Box::new(tx));
            eps[ti].add_recv(s, back.nodes.clone(), Box::new(rx));
        }
    }
    Ok(eps)
}
