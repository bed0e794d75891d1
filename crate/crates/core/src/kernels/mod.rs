//! Sampling primitives: proximity operators, the Gaussian coupling
//! gradient, PSGLA transitions, the exact conditional of the auxiliary
//! variable and seeded noise.

mod noise;
mod poisson;

pub use noise::{philox4x32_10, NoiseSource, NormalCursor, Stream};
pub use poisson::sample_poisson;

use crate::error::{Error, Result};

/// Coupling scales and step sizes. Scales are stored squared.
#[derive(Debug, Clone, PartialEq)]
pub struct AxdaParams {
    pub alpha2: Vec<f64>,
    pub beta2: Vec<f64>,
    pub gamma: f64,
    pub eta: Vec<f64>,
    pub kappa: f64,
    pub lambda_h: f64,
}

impl AxdaParams {
    /// Largest admissible `gamma` given squared operator norm bounds.
    pub fn gamma_max(&self, norms_sq: &[f64]) -> f64 {
        let s: f64 = norms_sq.iter().zip(&self.alpha2).map(|(n, a)| n / a).sum();
        1.0 / (self.lambda_h + s)
    }

    /// Checks positivity and the step-size rules. `strict` additionally
    /// rejects steps at or beyond their bounds.
    pub fn validate(&self, norms_sq: &[f64], strict: bool) -> Result<()> {
        let i = self.alpha2.len();
        if i == 0 || self.beta2.len() != i || self.eta.len() != i || norms_sq.len() != i {
            return Err(Error::InvalidParameter(format!(
                "need one alpha, beta, eta and norm per operator ({i} alphas, {} betas, {} etas, {} norms)",
                self.beta2.len(),
                self.eta.len(),
                norms_sq.len()
            )));
        }
        let all = self.alpha2.iter().chain(&self.beta2).chain(&self.eta);
        if all
            .chain([&self.gamma])
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::InvalidParameter(
                "coupling scales and steps must be positive".into(),
            ));
        }
        if !(self.kappa >= 0.0 && self.lambda_h >= 0.0) {
            return Err(Error::InvalidParameter(
                "kappa and lambda_h must be nonnegative".into(),
            ));
        }
        if strict {
            let gmax = self.gamma_max(norms_sq);
            if self.gamma >= gmax {
                return Err(Error::InvalidParameter(format!(
                    "gamma {} not below bound {gmax}",
                    self.gamma
                )));
            }
            for (k, (e, a)) in self.eta.iter().zip(&self.alpha2).enumerate() {
                if *e >= 1.0 / a {
                    return Err(Error::InvalidParameter(format!(
                        "eta[{k}] = {e} not below bound {}",
                        1.0 / a
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Projection onto the nonnegative half-line.
#[inline]
pub fn prox_nonneg(q: f64) -> f64 {
    if q > 0.0 {
        q
    } else {
        0.0
    }
}

/// `argmin_z eta (z - y log z) + (z - q)^2 / 2` over the Poisson domain.
#[inline]
pub fn prox_poisson(q: f64, y: f64, eta: f64) -> f64 {
    let a = q - eta;
    let disc = (a * a + 4.0 * eta * y).sqrt();
    if a >= 0.0 {
        (a + disc) / 2.0
    } else if y > 0.0 {
        2.0 * eta * y / (disc - a)
    } else {
        0.0
    }
}

/// Block soft-thresholding of one group: `q max(0, 1 - weight / |q|)`.
#[inline]
pub fn prox_group_l21(q: &mut [f64], weight: f64) {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= weight || norm == 0.0 {
        q.iter_mut().for_each(|v| *v = 0.0);
    } else {
        let s = 1.0 - weight / norm;
        q.iter_mut().for_each(|v| *v *= s);
    }
}

/// Gradient of `|v - (z - u)|^2 / (2 alpha^2)` with respect to `v`.
#[inline]
pub fn grad_phi(v: f64, z: f64, u: f64, alpha2: f64) -> f64 {
    (v - z + u) / alpha2
}

/// Argument of the proximal step of one PSGLA transition.
#[inline]
pub fn psgla_drift(x: f64, grad_h: f64, delta: f64, w: f64, gamma: f64, sqrt_2gamma: f64) -> f64 {
    x - gamma * grad_h - gamma * delta + sqrt_2gamma * w
}

/// One PSGLA transition for one coordinate.
pub fn psgla_step(
    x: f64,
    grad_h: f64,
    delta: f64,
    w: f64,
    gamma: f64,
    prox_f: impl Fn(f64, f64) -> f64,
) -> f64 {
    prox_f(
        psgla_drift(x, grad_h, delta, w, gamma, (2.0 * gamma).sqrt()),
        gamma,
    )
}

/// Argument of the proximal step of the PSGLA transition for `z`: a
/// gradient step on `|v - (z - u)|^2 / (2 alpha^2)` in `z`, plus noise.
#[inline]
pub fn psgla_z_drift(
    z: f64,
    v: f64,
    u: f64,
    eta_over_alpha2: f64,
    sqrt_2eta: f64,
    noise: f64,
) -> f64 {
    z - eta_over_alpha2 * (z - v - u) + sqrt_2eta * noise
}

/// One PSGLA transition for one scalar `z` coordinate.
pub fn psgla_z_step(
    z: f64,
    v: f64,
    u: f64,
    alpha2: f64,
    eta: f64,
    noise: f64,
    prox_g: impl Fn(f64, f64) -> f64,
) -> f64 {
    prox_g(
        psgla_z_drift(z, v, u, eta / alpha2, (2.0 * eta).sqrt(), noise),
        eta,
    )
}

/// Mean factor and standard deviation of the conditional of `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UConditional {
    pub mean_factor: f64,
    pub std: f64,
}

impl UConditional {
    pub fn new(alpha2: f64, beta2: f64) -> Self {
        Self {
            mean_factor: beta2 / (alpha2 + beta2),
            std: (alpha2 * beta2 / (alpha2 + beta2)).sqrt(),
        }
    }

    #[inline]
    pub fn sample(&self, v: f64, z: f64, noise: f64) -> f64 {
        self.mean_factor * (z - v) + self.std * noise
    }
}

/// Draw of `u` given `(v, z)`: mean `beta^2/(alpha^2+beta^2) (z - v)`,
/// variance `alpha^2 beta^2 / (alpha^2 + beta^2)`.
pub fn sample_u(v: f64, z: f64, alpha2: f64, beta2: f64, noise: f64) -> f64 {
    UConditional::new(alpha2, beta2).sample(v, z, noise)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimum of `f` over `n` evenly spaced points of `[lo, hi]`.
    fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        (0..n)
            .map(|i| f(lo + (hi - lo) * i as f64 / (n - 1) as f64))
            .fold(f64::INFINITY, f64::min)
    }

    fn poisson_obj(z: f64, q: f64, y: f64, eta: f64) -> f64 {
        let fid = if z < 0.0 || (z == 0.0 && y > 0.0) {
            f64::INFINITY
        } else if y == 0.0 {
            z
        } else {
            z - y * z.ln()
        };
        eta * fid + 0.5 * (z - q) * (z - q)
    }

    #[test]
    fn nonneg_examples() {
        let out: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|&q| prox_nonneg(q)).collect();
        assert_eq!(out, vec![0.0, 0.0, 2.0]);
        for q in [-3.0, -0.5, 0.25, 4.0] {
            let obj = |z: f64| {
                if z < 0.0 {
                    f64::INFINITY
                } else {
                    0.5 * (z - q) * (z - q)
                }
            };
            assert!(obj(prox_nonneg(q)) <= grid_min(obj, -5.0, 5.0, 10_001) + 1e-8);
        }
    }

    #[test]
    fn poisson_examples() {
        assert_eq!(prox_poisson(3.0, 0.0, 1.0), 2.0);
        assert_eq!(prox_poisson(1.0, 4.0, 1.0), 2.0);
        assert!((prox_poisson(0.0, 1.0, 1.0) - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
        assert!(prox_poisson(-50.0, 1.0, 1.0) > 0.0);
        assert_eq!(prox_poisson(-1.0, 0.0, 1.0), 0.0);
        for (q, y, eta) in [
            (3.0, 0.0, 1.0),
            (1.0, 4.0, 1.0),
            (0.0, 1.0, 1.0),
            (-2.0, 7.0, 0.3),
        ] {
            let z = prox_poisson(q, y, eta);
            let lo = grid_min(|t| poisson_obj(t, q, y, eta), 0.0, 10.0, 10_001);
            assert!(poisson_obj(z, q, y, eta) <= lo + 1e-8);
        }
    }

    #[test]
    fn group_examples() {
        let mut q = [3.0, 4.0];
        prox_group_l21(&mut q, 1.0);
        assert!((q[0] - 2.4).abs() < 1e-15 && (q[1] - 3.2).abs() < 1e-15);
        let mut q = [3.0, 4.0];
        prox_group_l21(&mut q, 5.0);
        assert_eq!(q, [0.0, 0.0]);
        let mut q = [0.0, 0.0];
        prox_group_l21(&mut q, 0.5);
        assert_eq!(q, [0.0, 0.0]);
    }

    #[test]
    fn grad_phi_examples_and_finite_difference() {
        assert_eq!(grad_phi(2.0, 1.0, 0.0, 1.0), 1.0);
        assert_eq!(grad_phi(1.5, 2.0, 0.5, 1.0), 0.0);
        assert_eq!(grad_phi(2.0, 1.0, 0.0, 4.0), 0.25);
        let phi = |v: f64, z: f64, u: f64, a2: f64| (v - (z - u)).powi(2) / (2.0 * a2);
        for (v, z, u, a2) in [
            (0.3, -1.2, 0.7, 1.0),
            (5.0, 2.0, -1.0, 0.25),
            (-3.0, 4.0, 0.1, 9.0),
        ] {
            let h = 1e-5;
            let fd = (phi(v + h, z, u, a2) - phi(v - h, z, u, a2)) / (2.0 * h);
            let g = grad_phi(v, z, u, a2);
            assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0));
        }
    }

    #[test]
    fn psgla_examples() {
        assert_eq!(
            psgla_step(1.0, 0.0, 4.0, 0.0, 0.5, |q, _| prox_nonneg(q)),
            0.0
        );
        assert_eq!(psgla_step(1.7, 0.0, 0.0, 0.0, 0.1, |q, _| q), 1.7);
        let s = NoiseSource::new(5);
        let w = s.normal(Stream::X, 0, 3, 9);
        let a = psgla_step(1.0, 0.2, 0.3, w, 0.1, |q, _| prox_nonneg(q));
        let b = psgla_step(1.0, 0.2, 0.3, s.normal(Stream::X, 0, 3, 9), 0.1, |q, _| {
            prox_nonneg(q)
        });
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn z_step_examples() {
        assert_eq!(psgla_z_step(2.0, 1.5, 0.5, 1.0, 0.5, 0.0, |q, _| q), 2.0);
        assert_eq!(psgla_z_step(2.0, 2.5, 0.5, 1.0, 0.5, 0.0, |q, _| q), 2.5);
        assert_eq!(
            psgla_z_step(3.0, 3.0, 0.0, 1.0, 1.0, 0.0, |q, e| prox_poisson(q, 0.0, e)),
            2.0
        );
        // group term with zero drift: each component keeps its value before the prox
        let mut q = [
            psgla_z_step(3.0, 3.0, 0.0, 1.0, 1.0, 0.0, |q, _| q),
            psgla_z_step(4.0, 4.0, 0.0, 1.0, 1.0, 0.0, |q, _| q),
        ];
        prox_group_l21(&mut q, 1.0);
        assert!((q[0] - 2.4).abs() < 1e-15 && (q[1] - 3.2).abs() < 1e-15);
    }

    #[test]
    fn z_drift_descends_the_coupling() {
        // centered difference of |v - z + u|^2 / (2 alpha^2) in z
        let (v, u, alpha2, eta) = (0.7, -0.3, 2.0, 0.1);
        let phi = |z: f64| (v - z + u) * (v - z + u) / (2.0 * alpha2);
        for z in [-1.0, 0.2, 3.5] {
            let h = 1e-5;
            let g = (phi(z + h) - phi(z - h)) / (2.0 * h);
            let step = psgla_z_drift(z, v, u, eta / alpha2, 0.0, 0.0);
            assert!((step - (z - eta * g)).abs() < 1e-9);
        }
    }

    #[test]
    fn u_examples() {
        assert_eq!(sample_u(1.0, 3.0, 1.0, 1.0, 0.0), 1.0);
        assert_eq!(sample_u(2.0, 2.0, 1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn u_variance_half() {
        let s = NoiseSource::new(77);
        let n = 100_000;
        let d: Vec<f64> = (0..n)
            .map(|i| sample_u(0.0, 0.0, 1.0, 1.0, s.normal(Stream::U, 0, i, 0)))
            .collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((v - 0.5).abs() < 0.01);
    }

    #[test]
    fn params_validation() {
        let p = AxdaParams {
            alpha2: vec![1.0, 1.0],
            beta2: vec![1.0, 1.0],
            gamma: 0.99 / 9.0,
            eta: vec![0.99, 0.99],
            kappa: 1.0,
            lambda_h: 0.0,
        };
        assert!((p.gamma_max(&[1.0, 8.0]) - 1.0 / 9.0).abs() < 1e-15);
        assert!(p.validate(&[1.0, 8.0], true).is_ok());
        let mut q = p.clone();
        q.gamma = 0.2;
        assert!(q.validate(&[1.0, 8.0], true).is_err());
        assert!(q.validate(&[1.0, 8.0], false).is_ok());
        q.eta[1] = 1.0;
        assert!(q.validate(&[1.0, 8.0], false).is_ok());
        q.alpha2[0] = 0.0;
        assert!(q.validate(&[1.0, 8.0], false).is_err());
    }
}
