//! Wire format shared by all backends.
//!
//! Header (36 bytes, little-endian): magic `DSPA`, version u16, phase u16,
//! iteration u64, source u32, destination u32, operator u32, payload length
//! in bytes u64. The payload is a sequence of little-endian f64 values.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DSPA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 36;
/// Operator index used by frames that cover all operators at once.
pub const ALL_OPERATORS: u32 = u32::MAX;
/// Largest accepted payload, in bytes.
pub const MAX_PAYLOAD: u64 = 1 << 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Halo = 1,
    Adjoint = 2,
    Control = 3,
}

impl Phase {
    fn from_u16(v: u16) -> Result<Self> {
        match v {
            1 => Ok(Self::Halo),
            2 => Ok(Self::Adjoint),
            3 => Ok(Self::Control),
            _ => Err(Error::ProtocolViolation(format!("unknown phase tag {v}"))),
        }
    }
}

/// Subtypes of control frames, carried in the operator field.
pub mod control {
    pub const ROLL_CALL: u32 = 0;
    pub const BARRIER_ENTER: u32 = 1;
    pub const BARRIER_RELEASE: u32 = 2;
    pub const GATHER: u32 = 3;
    pub const ABORT: u32 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub phase: Phase,
    pub t: u64,
    pub src: u32,
    pub dst: u32,
    pub op: u32,
    pub payload: Vec<f64>,
}

impl Frame {
    pub fn new(phase: Phase, t: u64, src: usize, dst: usize, op: u32, payload: Vec<f64>) -> Self {
        Self {
            phase,
            t,
            src: src as u32,
            dst: dst as u32,
            op,
            payload,
        }
    }

    /// Rejects NaN payload entries.
    pub fn check_payload(&self) -> Result<()> {
        match self.payload.iter().position(|v| v.is_nan()) {
            Some(i) => Err(Error::ProtocolViolation(format!(
                "NaN at payload index {i} of frame {}->{} phase {:?} t {}",
                self.src, self.dst, self.phase, self.t
            ))),
            None => Ok(()),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.phase as u16).to_le_bytes());
        buf.extend_from_slice(&self.t.to_le_bytes());
        buf.extend_from_slice(&self.src.to_le_bytes());
        buf.extend_from_slice(&self.dst.to_le_bytes());
        buf.extend_from_slice(&self.op.to_le_bytes());
        buf.extend_from_slice(&(8 * self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Parses a header, returning the frame with an empty payload and the
    /// payload length in bytes.
    pub fn decode_header(h: &[u8; HEADER_LEN]) -> Result<(Self, u64)> {
        if h[0..4] != MAGIC {
            return Err(Error::ProtocolViolation(format!(
                "bad magic {:?}",
                &h[0..4]
            )));
        }
        let u16_at = |i: usize| u16::from_le_bytes([h[i], h[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(h[i..i + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::ProtocolViolation(format!(
                "unsupported version {version}"
            )));
        }
        let len = u64_at(28);
        if len % 8 != 0 || len > MAX_PAYLOAD {
            return Err(Error::ProtocolViolation(format!(
                "bad payload length {len}"
            )));
        }
        let frame = Self {
            phase: Phase::from_u16(u16_at(6))?,
            t: u64_at(8),
            src: u32_at(16),
            dst: u32_at(20),
            op: u32_at(24),
            payload: Vec::new(),
        };
        Ok((frame, len))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header: &[u8; HEADER_LEN] = bytes
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| Error::ProtocolViolation("truncated header".into()))?;
        let (mut frame, len) = Self::decode_header(header)?;
        let body = &bytes[HEADER_LEN..];
        if body.len() as u64 != len {
            return Err(Error::ProtocolViolation(format!(
                "payload length field {len} but {} bytes present",
                body.len()
            )));
        }
        frame.payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        frame.check_payload()?;
        Ok(frame)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        let (mut frame, len) = Self::decode_header(&header)?;
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        frame.payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        frame.check_payload()?;
        Ok(frame)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let f = Frame::new(Phase::Adjoint, 7, 1, 2, 3, vec![1.5]);
        let b = f.encode();
        assert_eq!(b.len(), HEADER_LEN + 8);
        assert_eq!(&b[0..4], &[0x44, 0x53, 0x50, 0x41]);
        assert_eq!(u16::from_le_bytes([b[6], b[7]]), 2);
        assert_eq!(u64::from_le_bytes(b[28..36].try_into().unwrap()), 8);
        assert_eq!(Frame::decode(&b).unwrap(), f);
    }

    #[test]
    fn rejects_corruption() {
        let f = Frame::new(Phase::Halo, 0, 0, 1, 0, vec![1.0, 2.0]);
        let mut b = f.encode();
        b[0] = b'X';
        assert!(matches!(
            Frame::decode(&b),
            Err(Error::ProtocolViolation(_))
        ));
        let b = f.encode();
        assert!(matches!(
            Frame::decode(&b[..b.len() - 1]),
            Err(Error::ProtocolViolation(_))
        ));
        let mut b = f.encode();
        b[6] = 9;
        assert!(matches!(
            Frame::decode(&b),
            Err(Error::ProtocolViolation(_))
        ));
        let nan = Frame::new(Phase::Halo, 0, 0, 1, 0, vec![f64::NAN]);
        assert!(matches!(
            Frame::decode(&nan.encode()),
            Err(Error::ProtocolViolation(_))
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_bits(bits in proptest::collection::vec(any::<u64>(), 0..64), t in any::<u64>(), op in any::<u32>()) {
            let payload: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
            let f = Frame::new(Phase::Halo, t, 3, 5, op, payload.clone());
            let decoded = Frame::decode(&f.encode());
            if payload.iter().any(|v| v.is_nan()) {
                prop_assert!(matches!(decoded, Err(Error::ProtocolViolation(_))));
            } else {
                let d = decoded.unwrap();
                let back: Vec<u64> = d.payload.iter().map(|v| v.to_bits()).collect();
                let orig: Vec<u64> = payload.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(back, orig);
                let mut cursor = std::io::Cursor::new(f.encode());
                prop_assert_eq!(Frame::read_from(&mut cursor).unwrap().t, t);
            }
        }
    }
}
