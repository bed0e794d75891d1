//! Channel-based backend for workers living in one process.

use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use super::endpoint::{Backend, Endpoint};
use super::frame::Frame;
use crate::error::{Error, Result};

pub struct InProcBackend {
    rank: usize,
    peers: Vec<Sender<Frame>>,
    inbox: Receiver<Frame>,
}

/// Creates `size` connected backends, indexed by rank.
pub fn inproc_network(size: usize) -> Vec<InProcBackend> {
    let (senders, receivers): (Vec<_>, Vec<_>) = (0..size).map(|_| channel()).unzip();
    receivers
        .into_iter()
        .enumerate()
        .map(|(rank, inbox)| InProcBackend {
            rank,
            peers: senders.clone(),
            inbox,
        })
        .collect()
}

/// Endpoints over a fresh in-process network.
pub fn inproc_endpoints(size: usize) -> Vec<Endpoint> {
    inproc_network(size)
        .into_iter()
        .map(|b| Endpoint::new(Box::new(b)))
        .collect()
}

impl Backend for InProcBackend {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.peers.len()
    }

    fn send(&mut self, frame: Frame) -> Result<()> {
        let dst = frame.dst as usize;
        let peer = self
            .peers
            .get(dst)
            .ok_or_else(|| Error::ProtocolViolation(format!("no rank {dst}")))?;
        peer.send(frame)
            .map_err(|_| Error::TransportFailure(format!("rank {dst} has shut down")))
    }

    fn recv_any(&mut self, timeout: Duration) -> Result<Frame> {
        self.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => {
                Error::TransportFailure(format!("rank {} timed out", self.rank))
            }
            RecvTimeoutError::Disconnected => {
                Error::TransportFailure(format!("rank {} lost all peers", self.rank))
            }
        })
    }
}
