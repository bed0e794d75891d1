//! Per-element transitions shared by the serial and distributed chains.
//! Both call these with the same element indices, so noise and rounding
//! agree exactly.

use std::ops::Range;

use super::problem::{LocalCoupling, Problem};
use crate::kernels::{grad_phi, psgla_drift, psgla_z_drift, NoiseSource, Stream, UConditional};

#[derive(Debug, Clone, Copy)]
pub(crate) struct TermConsts {
    pub alpha2: f64,
    pub eta: f64,
    pub eta_over_alpha2: f64,
    pub sqrt_2eta: f64,
    pub u: UConditional,
}

impl TermConsts {
    pub fn all(problem: &Problem) -> Vec<Self> {
        let p = &problem.params;
        (0..problem.num_terms())
            .map(|i| Self {
                alpha2: p.alpha2[i],
                eta: p.eta[i],
                eta_over_alpha2: p.eta[i] / p.alpha2[i],
                sqrt_2eta: (2.0 * p.eta[i]).sqrt(),
                u: UConditional::new(p.alpha2[i], p.beta2[i]),
            })
            .collect()
    }
}

/// `d = (v - z + u) / alpha^2`.
pub(crate) fn dual(c: &TermConsts, v: &[f64], z: &[f64], u: &[f64], d: &mut [f64]) {
    for (j, dj) in d.iter_mut().enumerate() {
        *dj = grad_phi(v[j], z[j], u[j], c.alpha2);
    }
}

/// PSGLA transition of `x` given the aggregated adjoint `delta`.
pub(crate) fn update_x(
    problem: &Problem,
    noise: &NoiseSource,
    t: u64,
    x: &mut [f64],
    delta: &[f64],
    elem: impl Fn(usize) -> u64,
) {
    let gamma = problem.params.gamma;
    let s2g = (2.0 * gamma).sqrt();
    let mut normals = noise.normals(Stream::X, 0, t);
    for (j, xj) in x.iter_mut().enumerate() {
        let w = normals.get(elem(j));
        let q = psgla_drift(*xj, problem.h.grad(*xj), delta[j], w, gamma, s2g);
        *xj = problem.f.prox(q, gamma);
    }
}

/// PSGLA transition of `z_i` (one prox per hyperedge block), then the exact
/// draw of `u_i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_z_u(
    c: &TermConsts,
    g: &LocalCoupling,
    op: u8,
    noise: &NoiseSource,
    t: u64,
    v: &[f64],
    z: &mut [f64],
    u: &mut [f64],
    blocks: impl Iterator<Item = Range<usize>>,
    elem: impl Fn(usize) -> u64,
) {
    let mut normals = noise.normals(Stream::Z, op, t);
    for r in blocks {
        for e in r.clone() {
            let xi = normals.get(elem(e));
            z[e] = psgla_z_drift(z[e], v[e], u[e], c.eta_over_alpha2, c.sqrt_2eta, xi);
        }
        let start = r.start;
        g.prox_block(&mut z[r], start, c.eta);
    }
    let mut normals = noise.normals(Stream::U, op, t);
    for (e, ue) in u.iter_mut().enumerate() {
        *ue = c.u.sample(v[e], z[e], normals.get(elem(e)));
    }
}
