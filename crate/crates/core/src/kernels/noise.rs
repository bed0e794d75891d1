//! Counter-based Gaussian and uniform deviates (Philox4x32-10).
//!
//! Every deviate is a pure function of the seed and a stream id built from
//! global indices, so a value never depends on which worker draws it.

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

/// One Philox4x32 block with 10 rounds.
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let p0 = u64::from(M0) * u64::from(c[0]);
        let p1 = u64::from(M1) * u64::from(c[2]);
        let (hi0, lo0) = ((p0 >> 32) as u32, p0 as u32);
        let (hi1, lo1) = ((p1 >> 32) as u32, p1 as u32);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Which random variable a deviate feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    X = 1,
    Z = 2,
    U = 3,
    Data = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
    silent: bool,
}

/// See [`NoiseSource::normals`].
#[derive(Debug)]
pub struct NormalCursor<'a> {
    source: &'a NoiseSource,
    stream: Stream,
    op: u8,
    t: u64,
    pair: Option<u64>,
    values: (f64, f64),
}

impl NormalCursor<'_> {
    /// Same value as [`NoiseSource::normal`] for this element.
    #[inline]
    pub fn get(&mut self, element: u64) -> f64 {
        let pair = element >> 1;
        if self.pair != Some(pair) {
            self.values = self.source.normal_pair(self.stream, self.op, pair, self.t);
            self.pair = Some(pair);
        }
        if element & 1 == 0 {
            self.values.0
        } else {
            self.values.1
        }
    }
}

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            silent: false,
        }
    }

    /// Source whose normal deviates are all zero; uniforms are unaffected.
    pub fn silent(seed: u64) -> Self {
        Self { seed, silent: true }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn block(&self, stream: Stream, op: u8, element: u64, t: u64, draw: u16) -> (u64, u64) {
        let counter = [
            element as u32,
            (element >> 32) as u32,
            t as u32,
            (stream as u32) << 24 | u32::from(op) << 16 | u32::from(draw),
        ];
        let key = [self.seed as u32, (self.seed >> 32) as u32];
        let o = philox4x32_10(counter, key);
        (
            u64::from(o[0]) | u64::from(o[1]) << 32,
            u64::from(o[2]) | u64::from(o[3]) << 32,
        )
    }

    /// Box-Muller pair shared by elements `2 pair` and `2 pair + 1`.
    fn normal_pair(&self, stream: Stream, op: u8, pair: u64, t: u64) -> (f64, f64) {
        if self.silent {
            return (0.0, 0.0);
        }
        let (a, b) = self.block(stream, op, pair, t, 0);
        let u1 = ((a >> 11) as f64 + 0.5) * TWO_POW_M53;
        let u2 = (b >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        (r * cos, r * sin)
    }

    /// Standard normal deviate for `element` of operator `op` at iteration `t`.
    pub fn normal(&self, stream: Stream, op: u8, element: u64, t: u64) -> f64 {
        let (even, odd) = self.normal_pair(stream, op, element >> 1, t);
        if element & 1 == 0 {
            even
        } else {
            odd
        }
    }

    /// Caching reader of one stream at one iteration; visiting both elements
    /// of a pair in a row costs one block.
    pub fn normals(&self, stream: Stream, op: u8, t: u64) -> NormalCursor<'_> {
        NormalCursor {
            source: self,
            stream,
            op,
            t,
            pair: None,
            values: (0.0, 0.0),
        }
    }

    /// Uniform deviate on the open interval (0, 1).
    pub fn uniform(&self, stream: Stream, op: u8, element: u64, t: u64, draw: u16) -> f64 {
        let (a, _) = self.block(stream, op, element, t, draw);
        ((a >> 11) as f64 + 0.5) * TWO_POW_M53
    }
}
