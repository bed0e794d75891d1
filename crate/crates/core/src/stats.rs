//! Streaming chain summaries (MMSE, MAP, credibility intervals) and image
//! quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Running mean and variance of a scalar.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    /// Sample standard deviation (0 with fewer than two values).
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Post-burn-in summaries of the `x` chain.
///
/// Samples are numbered from 1 (the state after the first iteration).
/// Samples `burn_in + 1 ..` feed the running mean and the MAP search; the
/// first of them and every `thinning`-th after it go to the quantile buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSummary {
    burn_in: u64,
    thinning: u64,
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    map_x: Vec<f64>,
    map_potential: f64,
    map_sample: u64,
    buffer: Vec<f64>,
    potentials: Vec<(u64, f64)>,
    times: Welford,
}

impl ChainSummary {
    pub fn new(dim: usize, burn_in: u64, thinning: u64) -> Result<Self> {
        if thinning == 0 {
            return Err(Error::InvalidParameter(
                "thinning must be at least 1".into(),
            ));
        }
        Ok(Self {
            burn_in,
            thinning,
            dim,
            count: 0,
            mean: vec![0.0; dim],
            map_x: Vec::new(),
            map_potential: f64::INFINITY,
            map_sample: 0,
            buffer: Vec::new(),
            potentials: Vec::new(),
            times: Welford::default(),
        })
    }

    pub fn update(&mut self, sample: u64, x: &[f64], potential: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        self.potentials.push((sample, potential));
        if sample <= self.burn_in {
            return Ok(());
        }
        self.count += 1;
        let n = self.count as f64;
        for (m, &v) in self.mean.iter_mut().zip(x) {
            *m += (v - *m) / n;
        }
        if potential < self.map_potential || self.map_x.is_empty() {
            self.map_potential = potential;
            self.map_x = x.to_vec();
            self.map_sample = sample;
        }
        if (sample - self.burn_in - 1) % self.thinning == 0 {
            self.buffer.extend_from_slice(x);
        }
        Ok(())
    }

    pub fn record_time(&mut self, seconds: f64) {
        self.times.push(seconds);
    }

    /// Number of samples averaged so far.
    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mmse(&self) -> &[f64] {
        &self.mean
    }

    /// MAP sample, its potential and its sample number.
    pub fn map(&self) -> Option<(&[f64], f64, u64)> {
        (!self.map_x.is_empty()).then_some((&self.map_x[..], self.map_potential, self.map_sample))
    }

    /// Number of samples in the quantile buffer.
    pub fn buffered(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.buffer.len() / self.dim
        }
    }

    pub fn potentials(&self) -> &[(u64, f64)] {
        &self.potentials
    }

    /// Mean and standard deviation of the recorded iteration times.
    pub fn time_stats(&self) -> (f64, f64) {
        (self.times.mean, self.times.std())
    }

    /// Per-element nearest-rank quantiles of the buffer.
    pub fn quantiles(&self, ps: &[f64]) -> Result<Vec<Vec<f64>>> {
        let n = self.buffered();
        if n == 0 {
            return Err(Error::EmptyBuffer);
        }
        let mut out = vec![vec![0.0; self.dim]; ps.len()];
        let mut column = vec![0.0; n];
        for j in 0..self.dim {
            for (s, c) in column.iter_mut().enumerate() {
                *c = self.buffer[s * self.dim + j];
            }
            column.sort_by(f64::total_cmp);
            for (q, &p) in out.iter_mut().zip(ps) {
                q[j] = column[nearest_rank_index(n, p)];
            }
        }
        Ok(out)
    }

    /// 95% credibility interval bounds.
    pub fn credibility_interval(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut q = self.quantiles(&[0.025, 0.975])?;
        let high = q.pop().unwrap();
        Ok((q.pop().unwrap(), high))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let mut u = |v: u64| b.extend_from_slice(&v.to_le_bytes());
        u(self.burn_in);
        u(self.thinning);
        u(self.dim as u64);
        u(self.count);
        u(self.map_sample);
        u(self.map_x.len() as u64);
        u(self.buffer.len() as u64);
        u(self.potentials.len() as u64);
        u(self.times.n);
        let mut f = |v: f64| b.extend_from_slice(&v.to_le_bytes());
        f(self.map_potential);
        f(self.times.mean);
        f(self.times.m2);
        for &v in self.mean.iter().chain(&self.map_x).chain(&self.buffer) {
            f(v);
        }
        for &(s, p) in &self.potentials {
            b.extend_from_slice(&s.to_le_bytes());
            b.extend_from_slice(&p.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()));
        if bytes.len() % 8 != 0 {
            return Err(Error::BadFormat(
                "summary length not a multiple of 8".into(),
            ));
        }
        let mut next = || {
            words
                .next()
                .ok_or_else(|| Error::BadFormat("truncated summary".into()))
        };
        let burn_in = next()?;
        let thinning = next()?;
        let dim = next()? as usize;
        let count = next()?;
        let map_sample = next()?;
        let map_len = next()? as usize;
        let buf_len = next()? as usize;
        let pot_len = next()? as usize;
        let tn = next()?;
        let map_potential = f64::from_bits(next()?);
        let tmean = f64::from_bits(next()?);
        let tm2 = f64::from_bits(next()?);
        let mut vec =
            |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| next().map(f64::from_bits)).collect() };
        let mean = vec(dim)?;
        let map_x = vec(map_len)?;
        let buffer = vec(buf_len)?;
        let potentials = (0..pot_len)
            .map(|_| Ok((next()?, f64::from_bits(next()?))))
            .collect::<Result<_>>()?;
        if next().is_ok() {
            return Err(Error::BadFormat("trailing data in summary".into()));
        }
        if thinning == 0 || (dim > 0 && buf_len % dim != 0) {
            return Err(Error::BadFormat("inconsistent summary".into()));
        }
        Ok(Self {
            burn_in,
            thinning,
            dim,
            count,
            mean,
            map_x,
            map_potential,
            map_sample,
            buffer,
            potentials,
            times: Welford {
                n: tn,
                mean: tmean,
                m2: tm2,
            },
        })
    }
}

/// Zero-based index of the nearest-rank `p` quantile among `n` sorted values.
pub fn nearest_rank_index(n: usize, p: f64) -> usize {
    let rank = (p * n as f64).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Nearest-rank empirical quantile.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v[nearest_rank_index(v.len(), p)])
}

pub const SNR_CAP_DB: f64 = 300.0;

/// `10 log10(|truth|^2 / |truth - estimate|^2)`, capped at [`SNR_CAP_DB`].
pub fn snr(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    let signal: f64 = truth.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::InvalidParameter(
            "SNR of an all-zero reference".into(),
        ));
    }
    let noise: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn ssim_window() -> [f64; SSIM_WIN] {
    let c = (SSIM_WIN / 2) as f64;
    let mut w = [0.0; SSIM_WIN];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable weighted sums over every fully contained window.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WIN, w + 1 - SSIM_WIN);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..SSIM_WIN).map(|j| k[j] * img[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..SSIM_WIN).map(|i| k[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all 11x11 windows inside the image,
/// with Gaussian weights (sigma 1.5).
pub fn ssim(
    truth: &[f64],
    estimate: &[f64],
    height: usize,
    width: usize,
    dynamic_range: f64,
) -> Result<f64> {
    if truth.len() != height * width || estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: height * width,
            actual: estimate.len(),
        });
    }
    if height < SSIM_WIN || width < SSIM_WIN {
        return Err(Error::InvalidParameter(format!(
            "SSIM needs at least {SSIM_WIN}x{SSIM_WIN} pixels"
        )));
    }
    let k = ssim_window();
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
    let mx = filter_valid(truth, height, width, &k);
    let my = filter_valid(estimate, height, width, &k);
    let mxx = filter_valid(&prod(truth, truth), height, width, &k);
    let myy = filter_valid(&prod(estimate, estimate), height, width, &k);
    let mxy = filter_valid(&prod(truth, estimate), height, width, &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (a, b) = (mx[i], my[i]);
        let sxx = mxx[i] - a * a;
        let syy = myy[i] - b * b;
        let sxy = mxy[i] - a * b;
        total +=
            ((2.0 * a * b + c1) * (2.0 * sxy + c2)) / ((a * a + b * b + c1) * (sxx + syy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Summary metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub snr_mmse: Option<f64>,
    pub snr_map: Option<f64>,
    pub ssim_mmse: Option<f64>,
    pub ssim_map: Option<f64>,
    pub time_per_iter_mean_s: f64,
    pub time_per_iter_std_s: f64,
    pub runtime_s: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mmse_and_map_examples() {
        let mut s = ChainSummary::new(1, 0, 1).unwrap();
        s.update(1, &[1.0], 5.0).unwrap();
        s.update(2, &[3.0], 3.0).unwrap();
        s.update(3, &[2.0], 3.0).unwrap();
        assert_eq!(s.map().unwrap().2, 2);
        let mut s = ChainSummary::new(1, 1, 1).unwrap();
        s.update(1, &[100.0], 0.0).unwrap();
        s.update(2, &[1.0], 1.0).unwrap();
        s.update(3, &[3.0], 2.0).unwrap();
        assert_eq!(s.mmse(), &[2.0]);
        // burn-in samples never become the MAP
        assert_eq!(s.map().unwrap().0, &[1.0]);
        assert_eq!(s.potentials().len(), 3);
    }

    #[test]
    fn buffer_length_rounds_up() {
        for (t, burn, thin) in [(10u64, 2u64, 3u64), (9, 0, 3), (5, 5, 2), (7, 0, 1)] {
            let mut s = ChainSummary::new(2, burn, thin).unwrap();
            for i in 1..=t {
                s.update(i, &[i as f64, 0.0], 0.0).unwrap();
            }
            assert_eq!(s.buffered() as u64, (t - burn).div_ceil(thin));
        }
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.975).unwrap(), 975.0);
        assert_eq!(quantile(&[4.0; 7], 0.3).unwrap(), 4.0);
        assert_eq!(quantile(&[2.5], 0.025).unwrap(), 2.5);
        assert!(matches!(quantile(&[], 0.5), Err(Error::EmptyBuffer)));
        let s = ChainSummary::new(3, 0, 1).unwrap();
        assert!(matches!(s.credibility_interval(), Err(Error::EmptyBuffer)));
    }

    #[test]
    fn identity_thinning_matches_full_trace_quantiles() {
        let mut s = ChainSummary::new(2, 0, 1).unwrap();
        let mut col = Vec::new();
        let mut x = 0.37;
        for t in 1..=101 {
            x = (x * 3.9 * (1.0 - x)) % 1.0;
            col.push(x);
            s.update(t, &[x, -x], 0.0).unwrap();
        }
        let q = s.quantiles(&[0.1, 0.5, 0.9]).unwrap();
        for (qi, p) in q.iter().zip([0.1, 0.5, 0.9]) {
            assert_eq!(qi[0], quantile(&col, p).unwrap());
        }
    }

    #[test]
    fn snr_examples() {
        assert_eq!(snr(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 300.0);
        assert_eq!(snr(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!((snr(&[10.0, 0.0], &[9.0, 0.0]).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(
            snr(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn lcg_image(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6_364_136_223_846_793_005)
                    .wrapping_add(1_442_695_040_888_963_407);
                (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect()
    }

    /// Direct evaluation of the windowed formula, one window at a time.
    fn ssim_literal(x: &[f64], y: &[f64], h: usize, w: usize, range: f64) -> f64 {
        let mut g = [[0.0; 11]; 11];
        let mut total_w = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total_w += *v;
            }
        }
        let (c1, c2) = ((0.01 * range).powi(2), (0.03 * range).powi(2));
        let mut acc = 0.0;
        let mut count = 0;
        for r in 0..=h - 11 {
            for c in 0..=w - 11 {
                let at = |img: &[f64], i: usize, j: usize| img[(r + i) * w + c + j];
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        mx += g[i][j] / total_w * at(x, i, j);
                        my += g[i][j] / total_w * at(y, i, j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / total_w;
                        vx += wgt * (at(x, i, j) - mx).powi(2);
                        vy += wgt * (at(y, i, j) - my).powi(2);
                        cxy += wgt * (at(x, i, j) - mx) * (at(y, i, j) - my);
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cxy + c2)
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_literal_formula() {
        let x = lcg_image(64 * 64, 1);
        let y: Vec<f64> = x
            .iter()
            .zip(lcg_image(64 * 64, 2))
            .map(|(a, b)| 0.7 * a + 0.3 * b)
            .collect();
        let fast = ssim(&x, &y, 64, 64, 1.0).unwrap();
        let slow = ssim_literal(&x, &y, 64, 64, 1.0);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        assert!((ssim(&x, &x, 64, 64, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let inverted: Vec<f64> = x.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&x, &inverted, 64, 64, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn summary_bytes_roundtrip() {
        let mut s = ChainSummary::new(3, 1, 2).unwrap();
        for t in 1..=6 {
            s.update(t, &[t as f64, 0.5, -1.0], 10.0 - t as f64)
                .unwrap();
            s.record_time(0.01 * t as f64);
        }
        let back = ChainSummary::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
        assert!(ChainSummary::from_bytes(&s.to_bytes()[..40]).is_err());
    }

    proptest! {
        #[test]
        fn running_mean_and_interval_bounds(samples in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 4), 1..60), thin in 1u64..4) {
            let mut s = ChainSummary::new(4, 0, thin).unwrap();
            for (t, x) in samples.iter().enumerate() {
                s.update(t as u64 + 1, x, x[0]).unwrap();
            }
            let n = samples.len() as f64;
            for j in 0..4 {
                let batch: f64 = samples.iter().map(|x| x[j]).sum::<f64>() / n;
                prop_assert!((s.mmse()[j] - batch).abs() <= 1e-12 * batch.abs().max(1.0));
            }
            let (lo, hi) = s.credibility_interval().unwrap();
            let kept: Vec<&Vec<f64>> = samples.iter().step_by(thin as usize).collect();
            for j in 0..4 {
                let min = kept.iter().map(|x| x[j]).fold(f64::INFINITY, f64::min);
                let max = kept.iter().map(|x| x[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(min <= lo[j] && lo[j] <= hi[j] && hi[j] <= max);
            }
            let best = samples.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
            prop_assert_eq!(s.map().unwrap().1, best);
        }
    }
}
