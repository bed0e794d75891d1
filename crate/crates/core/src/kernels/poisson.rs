//! Seeded Poisson deviates: inversion for small means, transformed
//! rejection with squeeze (PTRS) otherwise.

use super::noise::{NoiseSource, Stream};

const INVERSION_LIMIT: f64 = 10.0;

/// Poisson deviate with the given mean for observation `element`.
pub fn sample_poisson(mean: f64, source: &NoiseSource, element: u64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let mut draw: u16 = 0;
    let mut uniform = || {
        let u = source.uniform(Stream::Data, 0, element, 0, draw);
        draw = draw.wrapping_add(1);
        u
    };
    if mean < INVERSION_LIMIT {
        let u = uniform();
        let mut k = 0u64;
        let mut p = (-mean).exp();
        let mut cdf = p;
        while u > cdf && p > 0.0 {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
        }
        return k;
    }
    let smu = mean.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    let log_mean = mean.ln();
    loop {
        let u = uniform() - 0.5;
        let v = uniform();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -mean + k * log_mean - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k as u64;
        }
    }
}
