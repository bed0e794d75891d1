//! Binary chain snapshots. One file per worker holds the owned part of `x`
//! and every `z_i`, `u_i` in the worker's local element order; `v_i` is
//! recomputed on resume.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DSPACKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Number of completed iterations.
    pub t: u64,
    pub num_workers: usize,
    pub rank: usize,
    pub x: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

/// File name of worker `rank`'s snapshot inside a checkpoint directory.
pub fn resume_path(dir: &Path, num_workers: usize, rank: usize) -> PathBuf {
    dir.join(format!("worker-{rank}-of-{num_workers}.ckpt"))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::BadFormat("truncated snapshot".into()));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

fn take_u64(bytes: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(bytes, 8)?.try_into().unwrap()))
}

impl Snapshot {
    pub fn to_bytes(&self) -> Vec<u8> {
        let vectors: Vec<&Vec<f64>> = std::iter::once(&self.x)
            .chain(self.z.iter().chain(&self.u))
            .collect();
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&(self.z.len() as u32).to_le_bytes());
        b.extend_from_slice(&self.t.to_le_bytes());
        b.extend_from_slice(&(self.num_workers as u64).to_le_bytes());
        b.extend_from_slice(&(self.rank as u64).to_le_bytes());
        for v in &vectors {
            b.extend_from_slice(&(v.len() as u64).to_le_bytes());
        }
        for v in &vectors {
            for x in v.iter() {
                b.extend_from_slice(&x.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let b = &mut bytes;
        if take(b, 8)? != MAGIC {
            return Err(Error::BadFormat("not a snapshot file".into()));
        }
        let version = u32::from_le_bytes(take(b, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::BadFormat(format!("snapshot version {version}")));
        }
        let terms = u32::from_le_bytes(take(b, 4)?.try_into().unwrap()) as usize;
        let t = take_u64(b)?;
        let num_workers = take_u64(b)? as usize;
        let rank = take_u64(b)? as usize;
        let lens: Vec<usize> = (0..1 + 2 * terms)
            .map(|_| take_u64(b).map(|l| l as usize))
            .collect::<Result<_>>()?;
        let mut vectors = Vec::with_capacity(lens.len());
        for len in lens {
            let raw = take(
                b,
                len.checked_mul(8)
                    .ok_or_else(|| Error::BadFormat("length overflow".into()))?,
            )?;
            vectors.push(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect::<Vec<f64>>(),
            );
        }
        if !b.is_empty() {
            return Err(Error::BadFormat(format!(
                "{} trailing bytes in snapshot",
                b.len()
            )));
        }
        let mut it = vectors.into_iter();
        let x = it.next().unwrap();
        let z: Vec<Vec<f64>> = it.by_ref().take(terms).collect();
        let u: Vec<Vec<f64>> = it.collect();
        Ok(Self {
            t,
            num_workers,
            rank,
            x,
            z,
            u,
        })
    }

    /// Writes through a temporary file so a crash never leaves a torn snapshot.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Checks that the snapshot belongs to this worker and layout.
    pub fn check(
        &self,
        num_workers: usize,
        rank: usize,
        x_len: usize,
        term_lens: &[usize],
    ) -> Result<()> {
        if self.num_workers != num_workers || self.rank != rank {
            return Err(Error::BadFormat(format!(
                "snapshot of worker {} of {} loaded by worker {rank} of {num_workers}",
                self.rank, self.num_workers
            )));
        }
        let ok = self.x.len() == x_len
            && self.z.len() == term_lens.len()
            && self
                .z
                .iter()
                .zip(&self.u)
                .zip(term_lens)
                .all(|((z, u), &l)| z.len() == l && u.len() == l);
        if !ok {
            return Err(Error::BadFormat(
                "snapshot does not match the problem layout".into(),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_bits() {
        let s = Snapshot {
            t: 2500,
            num_workers: 4,
            rank: 3,
            x: vec![1.0, -0.0, f64::MIN_POSITIVE],
            z: vec![vec![2.0], vec![]],
            u: vec![vec![-3.5], vec![]],
        };
        let back = Snapshot::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.x[1].to_bits(), (-0.0f64).to_bits());
        back.check(4, 3, 3, &[1, 0]).unwrap();
        assert!(back.check(4, 2, 3, &[1, 0]).is_err());
        assert!(back.check(4, 3, 3, &[2, 0]).is_err());
    }

    #[test]
    fn rejects_damage() {
        let s = Snapshot {
            t: 1,
            num_workers: 1,
            rank: 0,
            x: vec![1.0],
            z: vec![vec![2.0]],
            u: vec![vec![3.0]],
        };
        let b = s.to_bytes();
        assert!(Snapshot::from_bytes(&b[..b.len() - 1]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Snapshot::from_bytes(&extra).is_err());
        let mut magic = b;
        magic[0] = b'X';
        assert!(Snapshot::from_bytes(&magic).is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Snapshot {
            t: 7,
            num_workers: 2,
            rank: 1,
            x: vec![0.5; 5],
            z: vec![vec![1.0; 3]],
            u: vec![vec![-1.0; 3]],
        };
        let p = resume_path(dir.path(), 2, 1);
        s.write(&p).unwrap();
        assert_eq!(Snapshot::read(&p).unwrap(), s);
        assert!(p.ends_with("worker-1-of-2.ckpt"));
    }
}
