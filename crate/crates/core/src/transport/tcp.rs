//! Full-mesh TCP backend. Each rank listens on its own address, dials every
//! lower rank and accepts every higher rank; a reader thread per peer
//! decodes frames into a shared queue.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::endpoint::Backend;
use super::frame::Frame;
use crate::error::{Error, Result};

/// Environment variable overriding the address this rank binds to.
pub const BIND_ENV: &str = "DSPA_BIND_ADDR";

pub struct TcpBackend {
    rank: usize,
    size: usize,
    writers: Vec<Option<BufWriter<TcpStream>>>,
    inbox: Receiver<Result<Frame>>,
}

fn transport_err(what: impl std::fmt::Display) -> Error {
    Error::TransportFailure(what.to_string())
}

impl TcpBackend {
    /// Binds `addrs[rank]` (or the override from [`BIND_ENV`]) and connects
    /// to every other rank within `timeout`.
    pub fn connect(rank: usize, addrs: &[SocketAddr], timeout: Duration) -> Result<Self> {
        let bind = match std::env::var(BIND_ENV) {
            Ok(s) => s
                .parse::<SocketAddr>()
                .map_err(|e| Error::InvalidParameter(format!("{BIND_ENV}={s}: {e}")))?,
            Err(_) => addrs[rank],
        };
        let listener =
            TcpListener::bind(bind).map_err(|e| transport_err(format!("bind {bind}: {e}")))?;
        Self::with_listener(rank, listener, addrs, timeout)
    }

    /// Like [`TcpBackend::connect`] with an already bound listener.
    pub fn with_listener(
        rank: usize,
        listener: TcpListener,
        addrs: &[SocketAddr],
        timeout: Duration,
    ) -> Result<Self> {
        let size = addrs.len();
        if rank >= size {
            return Err(Error::InvalidParameter(format!(
                "rank {rank} outside {size} ranks"
            )));
        }
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();

        for (peer, addr) in addrs.iter().enumerate().take(rank) {
            let stream = loop {
                match TcpStream::connect_timeout(addr, Duration::from_millis(500)) {
                    Ok(s) => break s,
                    Err(e) if Instant::now() >= deadline => {
                        return Err(transport_err(format!(
                            "rank {rank} cannot reach rank {peer} at {addr}: {e}"
                        )))
                    }
                    Err(_) => thread::sleep(Duration::from_millis(20)),
                }
            };
            let mut s = stream;
            s.write_all(&(rank as u32).to_le_bytes())?;
            streams[peer] = Some(s);
        }

        listener.set_nonblocking(true)?;
        let mut pending = size - 1 - rank;
        while pending > 0 {
            match listener.accept() {
                Ok((mut s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_read_timeout(Some(
                        deadline
                            .saturating_duration_since(Instant::now())
                            .max(Duration::from_millis(1)),
                    ))?;
                    let mut id = [0u8; 4];
                    s.read_exact(&mut id).map_err(|e| {
                        transport_err(format!("rank {rank}: handshake failed: {e}"))
                    })?;
                    let peer = u32::from_le_bytes(id) as usize;
                    if peer <= rank || peer >= size || streams[peer].is_some() {
                        return Err(Error::ProtocolViolation(format!(
                            "rank {rank}: unexpected peer id {peer}"
                        )));
                    }
                    s.set_read_timeout(None)?;
                    streams[peer] = Some(s);
                    pending -= 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(transport_err(format!(
                            "rank {rank}: {pending} peers never connected"
                        )));
                    }
                    thread::sleep(Duration::from_millis(5));
                }
                Err(e) => return Err(e.into()),
            }
        }

        let (tx, inbox) = channel();
        let mut writers = Vec::with_capacity(size);
        for (peer, stream) in streams.into_iter().enumerate() {
            match stream {
                Some(s) => {
                    s.set_nodelay(true)?;
                    let reader = s.try_clone()?;
                    spawn_reader(reader, peer, tx.clone());
                    writers.push(Some(BufWriter::new(s)));
                }
                None => writers.push(None),
            }
        }
        Ok(Self {
            rank,
            size,
            writers,
            inbox,
        })
    }
}

fn spawn_reader(stream: TcpStream, peer: usize, tx: Sender<Result<Frame>>) {
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            let res = Frame::read_from(&mut r).map_err(|e| match e {
                Error::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
                    Error::PeerClosed(peer)
                }
                Error::Io(io) => transport_err(format!("connection to rank {peer} lost: {io}")),
                other => other,
            });
            let stop = res.is_err();
            if tx.send(res).is_err() || stop {
                break;
            }
        }
    });
}

impl Backend for TcpBackend {
    fn rank(&self) -> usize {
        self.rank
    }

    fn size(&self) -> usize {
        self.size
    }

    fn send(&mut self, frame: Frame) -> Result<()> {
        let dst = frame.dst as usize;
        let w = self
            .writers
            .get_mut(dst)
            .and_then(Option::as_mut)
            .ok_or_else(|| {
                Error::ProtocolViolation(format!("rank {} has no link to {dst}", self.rank))
            })?;
        w.write_all(&frame.encode())
            .and_then(|_| w.flush())
            .map_err(|e| transport_err(format!("send to rank {dst}: {e}")))
    }

    fn recv_any(&mut self, timeout: Duration) -> Result<Frame> {
        match self.inbox.recv_timeout(timeout) {
            Ok(res) => res,
            Err(RecvTimeoutError::Timeout) => {
                Err(transport_err(format!("rank {} timed out", self.rank)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(transport_err(format!("rank {} lost all peers", self.rank)))
            }
        }
    }
}

impl Drop for TcpBackend {
    fn drop(&mut self) {
        for w in self.writers.iter_mut().flatten() {
            let _ = w.flush();
            let _ = w.get_ref().shutdown(std::net::Shutdown::Write);
        }
    }
}
