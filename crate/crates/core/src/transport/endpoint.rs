use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::frame::{control, Frame, Phase};
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Raw frame delivery between ranks.
pub trait Backend: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    fn send(&mut self, frame: Frame) -> Result<()>;
    /// Next frame addressed to this rank from anyone, waiting at most `timeout`.
    fn recv_any(&mut self, timeout: Duration) -> Result<Frame>;
}

/// One worker's view of the network. Frames that arrive before they are
/// wanted are parked in a mailbox until a matching receive.
pub struct Endpoint {
    backend: Box<dyn Backend>,
    mailbox: Vec<Frame>,
    closed: Vec<bool>,
    timeout: Duration,
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Endpoint")
            .field("rank", &self.rank())
            .field("size", &self.size())
            .field("parked", &self.mailbox.len())
            .finish()
    }
}

const VARIABLES: [&str; 4] = ["x", "v", "z", "u"];

fn abort_reason(frame: &Frame) -> Error {
    match frame.payload[..] {
        [iteration, kind, term, index, nan, value] => {
            let mut variable = VARIABLES
                .get(kind as usize)
                .copied()
                .unwrap_or("x")
                .to_string();
            if term > 0.0 {
                variable.push_str(&(term as u64).to_string());
            }
            Error::NonFiniteState {
                iteration: iteration as u64,
                variable,
                index: index as usize,
                value: if nan == 1.0 { f64::NAN } else { value },
            }
        }
        _ => Error::TransportFailure(format!(
            "rank {} aborted at iteration {}",
            frame.src, frame.t
        )),
    }
}

fn hash_words(hash: u64) -> Vec<f64> {
    (0..4)
        .map(|i| ((hash >> (16 * i)) & 0xFFFF) as f64)
        .collect()
}

impl Endpoint {
    pub fn new(backend: Box<dyn Backend>) -> Self {
        Self {
            backend,
            mailbox: Vec::new(),
            closed: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn rank(&self) -> usize {
        self.backend.rank()
    }

    pub fn size(&self) -> usize {
        self.backend.size()
    }

    pub fn send(
        &mut self,
        phase: Phase,
        t: u64,
        dst: usize,
        op: u32,
        payload: Vec<f64>,
    ) -> Result<()> {
        let frame = Frame::new(phase, t, self.rank(), dst, op, payload);
        frame.check_payload()?;
        self.backend.send(frame)
    }

    /// Waits for the first frame from `src` satisfying `pred`, parking
    /// others. Other peers closing their connection is not an error.
    fn recv_where(
        &mut self,
        src: usize,
        what: &str,
        pred: impl Fn(&Frame) -> bool,
    ) -> Result<Frame> {
        if let Some(i) = self
            .mailbox
            .iter()
            .position(|f| f.src as usize == src && pred(f))
        {
            return Ok(self.mailbox.remove(i));
        }
        let deadline = Instant::now() + self.timeout;
        loop {
            if self.closed.get(src).copied().unwrap_or(false) {
                return Err(Error::TransportFailure(format!(
                    "rank {src} closed its connection (rank {} waiting for {what})",
                    self.rank()
                )));
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(Error::TransportFailure(format!(
                    "rank {} timed out after {:?} waiting for {what}",
                    self.rank(),
                    self.timeout
                )));
            }
            let frame = match self.backend.recv_any(left) {
                Ok(f) => f,
                Err(Error::PeerClosed(peer)) => {
                    if self.closed.len() <= peer {
                        self.closed.resize(peer + 1, false);
                    }
                    self.closed[peer] = true;
                    continue;
                }
                Err(Error::TransportFailure(msg)) => {
                    return Err(Error::TransportFailure(format!(
                        "{msg} (waiting for {what})"
                    )))
                }
                Err(e) => return Err(e),
            };
            if frame.phase == Phase::Control && frame.op == control::ABORT {
                return Err(abort_reason(&frame));
            }
            if frame.dst as usize != self.rank() {
                return Err(Error::ProtocolViolation(format!(
                    "rank {} received frame addressed to {}",
                    self.rank(),
                    frame.dst
                )));
            }
            if frame.src as usize == src && pred(&frame) {
                return Ok(frame);
            }
            self.mailbox.push(frame);
        }
    }

    /// Receives one data frame, checking its length.
    pub fn recv(
        &mut self,
        phase: Phase,
        t: u64,
        src: usize,
        op: u32,
        len: usize,
    ) -> Result<Vec<f64>> {
        let what = format!("{phase:?} frame t={t} op={op} from rank {src}");
        let f = self.recv_where(src, &what, |f| f.phase == phase && f.t == t && f.op == op)?;
        if f.payload.len() != len {
            return Err(Error::ProtocolViolation(format!(
                "{what}: {} values, expected {len}",
                f.payload.len()
            )));
        }
        Ok(f.payload)
    }

    /// Posts every send, then awaits every receive. `expected` gives the
    /// value count due from each source.
    pub fn exchange(
        &mut self,
        phase: Phase,
        t: u64,
        op: u32,
        outgoing: BTreeMap<usize, Vec<f64>>,
        expected: &BTreeMap<usize, usize>,
    ) -> Result<BTreeMap<usize, Vec<f64>>> {
        for (dst, payload) in outgoing {
            self.send(phase, t, dst, op, payload)?;
        }
        let mut incoming = BTreeMap::new();
        for (&src, &len) in expected {
            incoming.insert(src, self.recv(phase, t, src, op, len)?);
        }
        Ok(incoming)
    }

    /// Vertex halo exchange: send to `S_k`, receive from `R_k`.
    pub fn halo_exchange(
        &mut self,
        t: u64,
        op: u32,
        outgoing: BTreeMap<usize, Vec<f64>>,
        expected: &BTreeMap<usize, usize>,
    ) -> Result<BTreeMap<usize, Vec<f64>>> {
        self.exchange(Phase::Halo, t, op, outgoing, expected)
    }

    /// Adjoint partial exchange: send to `R_k`, receive from `S_k`.
    pub fn adjoint_exchange(
        &mut self,
        t: u64,
        op: u32,
        outgoing: BTreeMap<usize, Vec<f64>>,
        expected: &BTreeMap<usize, usize>,
    ) -> Result<BTreeMap<usize, Vec<f64>>> {
        self.exchange(Phase::Adjoint, t, op, outgoing, expected)
    }

    fn recv_control(&mut self, src: usize, op: u32) -> Result<Frame> {
        let what = format!("control {op} from rank {src}");
        self.recv_where(src, &what, |f| f.phase == Phase::Control && f.op == op)
    }

    /// Returns once every rank has entered the barrier for the same `t`.
    pub fn barrier(&mut self, t: u64) -> Result<()> {
        let (rank, size) = (self.rank(), self.size());
        if size == 1 {
            return Ok(());
        }
        if rank == 0 {
            for src in 1..size {
                let f = self.recv_control(src, control::BARRIER_ENTER)?;
                if f.t != t {
                    return Err(Error::ProtocolViolation(format!(
                        "barrier mismatch: rank {src} entered at t={}, rank 0 at t={t}",
                        f.t
                    )));
                }
            }
            for dst in 1..size {
                self.send(Phase::Control, t, dst, control::BARRIER_RELEASE, Vec::new())?;
            }
        } else {
            self.send(Phase::Control, t, 0, control::BARRIER_ENTER, Vec::new())?;
            let f = self.recv_control(0, control::BARRIER_RELEASE)?;
            if f.t != t {
                return Err(Error::ProtocolViolation(format!(
                    "barrier mismatch: released at t={}, entered at t={t}",
                    f.t
                )));
            }
        }
        Ok(())
    }

    /// Collects one payload per rank on rank 0 (indexed by rank); other
    /// ranks get `None`.
    pub fn gather(&mut self, t: u64, payload: Vec<f64>) -> Result<Option<Vec<Vec<f64>>>> {
        if self.rank() != 0 {
            self.send(Phase::Control, t, 0, control::GATHER, payload)?;
            return Ok(None);
        }
        let mut all = vec![payload];
        for src in 1..self.size() {
            let f = self.recv_where(src, "gather", |f| {
                f.phase == Phase::Control && f.op == control::GATHER && f.t == t
            })?;
            all.push(f.payload);
        }
        Ok(Some(all))
    }

    /// Startup handshake: every rank reports its config hash to rank 0,
    /// which checks them and answers with a verdict.
    pub fn roll_call(&mut self, config_hash: u64) -> Result<()> {
        let size = self.size();
        if size == 1 {
            return Ok(());
        }
        let mine = hash_words(config_hash);
        if self.rank() == 0 {
            let mut bad = None;
            for src in 1..size {
                let f = self.recv_control(src, control::ROLL_CALL)?;
                if f.payload != mine && bad.is_none() {
                    bad = Some(src);
                }
            }
            let verdict = if bad.is_some() { 0.0 } else { 1.0 };
            for dst in 1..size {
                self.send(Phase::Control, 0, dst, control::ROLL_CALL, vec![verdict])?;
            }
            if let Some(src) = bad {
                return Err(Error::ProtocolViolation(format!(
                    "rank {src} runs a different configuration"
                )));
            }
        } else {
            self.send(Phase::Control, 0, 0, control::ROLL_CALL, mine)?;
            let f = self.recv_control(0, control::ROLL_CALL)?;
            if f.payload != [1.0] {
                return Err(Error::ProtocolViolation(
                    "configuration hash rejected by rank 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Tells every other rank to stop; best effort.
    pub fn abort(&mut self, t: u64) {
        self.abort_with(t, None);
    }

    /// Like [`Endpoint::abort`], forwarding a divergence report so that
    /// every rank fails with the same [`Error::NonFiniteState`].
    pub fn abort_with(&mut self, t: u64, cause: Option<&Error>) {
        let payload = match cause {
            Some(Error::NonFiniteState {
                iteration,
                variable,
                index,
                value,
            }) => {
                let (kind, term) = variable.split_at(1.min(variable.len()));
                let kind = VARIABLES.iter().position(|v| *v == kind).unwrap_or(0);
                let term: f64 = term.parse().unwrap_or(0.0);
                let (nan, value) = if value.is_nan() {
                    (1.0, 0.0)
                } else {
                    (0.0, *value)
                };
                vec![
                    *iteration as f64,
                    kind as f64,
                    term,
                    *index as f64,
                    nan,
                    value,
                ]
            }
            _ => Vec::new(),
        };
        let me = self.rank();
        for dst in (0..self.size()).filter(|&d| d != me) {
            let _ = self.send(Phase::Control, t, dst, control::ABORT, payload.clone());
        }
    }
}
