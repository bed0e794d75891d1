//! Rank-to-rank communication for the SPMD sampler: a fixed binary frame
//! format, blocking rendezvous exchanges and two backends (in-process
//! channels and TCP).

mod endpoint;
mod frame;
mod grid;
mod inproc;
mod tcp;

pub use endpoint::{Backend, Endpoint, DEFAULT_TIMEOUT};
pub use frame::{control, Frame, Phase, ALL_OPERATORS, HEADER_LEN, MAGIC, VERSION};
pub use grid::{grid_halo_exchange, GridGeometry, Rect, GRID_HORIZONTAL, GRID_VERTICAL};
pub use inproc::{inproc_endpoints, inproc_network, InProcBackend};
pub use tcp::{TcpBackend, BIND_ENV};

use std::net::{SocketAddr, TcpListener};
use std::time::Duration;

use crate::error::Result;

/// Connects `size` TCP endpoints on loopback, one thread per rank; meant for
/// tests and single-host runs.
pub fn tcp_loopback_endpoints(size: usize, timeout: Duration) -> Result<Vec<Endpoint>> {
    let listeners: Vec<TcpListener> = (0..size)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    let addrs: Vec<SocketAddr> = listeners
        .iter()
        .map(TcpListener::local_addr)
        .collect::<std::io::Result<_>>()?;
    let handles: Vec<_> = listeners
        .into_iter()
        .enumerate()
        .map(|(rank, l)| {
            let addrs = addrs.clone();
            std::thread::spawn(move || TcpBackend::with_listener(rank, l, &addrs, timeout))
        })
        .collect();
    handles
        .into_iter()
        .map(|h| {
            let backend = h.join().expect("connect thread panicked")?;
            Ok(Endpoint::new(Box::new(backend)))
        })
        .collect()
}
