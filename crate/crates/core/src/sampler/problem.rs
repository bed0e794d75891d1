//! Model description: operators with their coupling terms, the separable
//! prior `f`, the smooth term `h` and the sampler parameters.

use crate::error::{Error, Result};
use crate::kernels::{prox_group_l21, prox_nonneg, prox_poisson, AxdaParams};
use crate::linops::{BlockSparseOperator, LinearOperator};

/// Nonsmooth term on `x`, separable per element.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorF {
    None,
    NonNegative,
    /// `precision / 2 * (x - center)^2` per element.
    Quadratic {
        center: f64,
        precision: f64,
    },
}

impl PriorF {
    #[inline]
    pub fn prox(&self, q: f64, gamma: f64) -> f64 {
        match *self {
            PriorF::None => q,
            PriorF::NonNegative => prox_nonneg(q),
            PriorF::Quadratic { center, precision } => {
                (q + gamma * precision * center) / (1.0 + gamma * precision)
            }
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            PriorF::None => 0.0,
            PriorF::NonNegative => {
                if x.iter().all(|&v| v >= 0.0) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            PriorF::Quadratic { center, precision } => x
                .iter()
                .map(|v| 0.5 * precision * (v - center).powi(2))
                .sum(),
        }
    }
}

/// Smooth term on `x`, separable per element.
#[derive(Debug, Clone, PartialEq)]
pub enum SmoothH {
    None,
    Quadratic { center: f64, precision: f64 },
}

impl SmoothH {
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        match *self {
            SmoothH::None => 0.0,
            SmoothH::Quadratic { center, precision } => precision * (x - center),
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            SmoothH::None => 0.0,
            SmoothH::Quadratic { precision, .. } => precision,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            SmoothH::None => 0.0,
            SmoothH::Quadratic { center, precision } => x
                .iter()
                .map(|v| 0.5 * precision * (v - center).powi(2))
                .sum(),
        }
    }
}

/// Term `g_i` applied to `D_i x`, separable per hyperedge.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    Zero,
    /// Poisson negative log-likelihood `z - y log z` per element (no constant).
    Poisson {
        y: Vec<f64>,
    },
    /// `weight * |z_m|_2` per hyperedge block.
    GroupL21 {
        weight: f64,
    },
    /// `precision / 2 * (z - center)^2` per element.
    Quadratic {
        center: f64,
        precision: f64,
    },
}

/// Per-element data needed by the prox of a coupling term, in some local
/// element order.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalCoupling {
    Zero,
    Poisson { y: Vec<f64> },
    GroupL21 { weight: f64 },
    Quadratic { center: f64, precision: f64 },
}

impl Coupling {
    /// Restricts element data to the given global element indices.
    pub fn localize(&self, elems: &[u64]) -> LocalCoupling {
        match self {
            Coupling::Zero => LocalCoupling::Zero,
            Coupling::Poisson { y } => LocalCoupling::Poisson {
                y: elems.iter().map(|&e| y[e as usize]).collect(),
            },
            Coupling::GroupL21 { weight } => LocalCoupling::GroupL21 { weight: *weight },
            Coupling::Quadratic { center, precision } => LocalCoupling::Quadratic {
                center: *center,
                precision: *precision,
            },
        }
    }

    /// Value of `g(v)`; `blocks` gives the element ranges of the hyperedges.
    pub fn value(&self, v: &[f64], blocks: &[usize]) -> f64 {
        match self {
            Coupling::Zero => 0.0,
            Coupling::Poisson { y } => {
                let mut s = 0.0;
                for (&z, &y) in v.iter().zip(y) {
                    if z < 0.0 || (z == 0.0 && y > 0.0) {
                        return f64::INFINITY;
                    }
                    s += if y > 0.0 { z - y * z.ln() } else { z };
                }
                s
            }
            Coupling::GroupL21 { weight } => {
                let mut s = 0.0;
                for w in blocks.windows(2) {
                    s += v[w[0]..w[1]].iter().map(|a| a * a).sum::<f64>().sqrt();
                }
                weight * s
            }
            Coupling::Quadratic { center, precision } => v
                .iter()
                .map(|z| 0.5 * precision * (z - center).powi(2))
                .sum(),
        }
    }
}

impl LocalCoupling {
    /// Applies `prox_{eta g}` in place to the values of one hyperedge whose
    /// elements start at local element `offset`.
    #[inline]
    pub fn prox_block(&self, q: &mut [f64], offset: usize, eta: f64) {
        match self {
            LocalCoupling::Zero => {}
            LocalCoupling::Poisson { y } => {
                for (j, v) in q.iter_mut().enumerate() {
                    *v = prox_poisson(*v, y[offset + j], eta);
                }
            }
            LocalCoupling::GroupL21 { weight } => prox_group_l21(q, eta * weight),
            LocalCoupling::Quadratic { center, precision } => {
                for v in q.iter_mut() {
                    *v = (*v + eta * precision * center) / (1.0 + eta * precision);
                }
            }
        }
    }
}

/// One operator `D_i` with its term `g_i`.
#[derive(Debug, Clone)]
pub struct Term {
    pub op: BlockSparseOperator,
    pub g: Coupling,
}

/// How `x` is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Zero,
    /// `max(0, D_i* y)` for the first Poisson term.
    BackProjected,
    Given(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub terms: Vec<Term>,
    pub f: PriorF,
    pub h: SmoothH,
    pub params: AxdaParams,
    pub init: Init,
}

/// State of the augmented chain in global indexing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one operator is required".into(),
            ));
        }
        let n = self.terms[0].op.input_dim();
        let dims = self.terms[0].op.structure().col_dims();
        for (i, t) in self.terms.iter().enumerate() {
            if t.op.structure().col_dims() != dims {
                return Err(Error::InvalidStructure(format!(
                    "operator {i} has a different vertex layout"
                )));
            }
            if let Coupling::Poisson { y } = &t.g {
                if y.len() != t.op.output_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: t.op.output_dim(),
                        actual: y.len(),
                    });
                }
                if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::InvalidParameter(
                        "observations must be nonnegative".into(),
                    ));
                }
            }
        }
        if self.params.alpha2.len() != self.terms.len() {
            return Err(Error::InvalidParameter(format!(
                "{} coupling scales for {} operators",
                self.params.alpha2.len(),
                self.terms.len()
            )));
        }
        if let Init::Given(x) = &self.init {
            if x.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: x.len(),
                });
            }
        }
        Ok(())
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn dim(&self) -> usize {
        self.terms[0].op.input_dim()
    }

    pub fn ops(&self) -> Vec<&BlockSparseOperator> {
        self.terms.iter().map(|t| &t.op).collect()
    }

    /// Element offsets of every hyperedge of operator `i` (length `M + 1`).
    pub fn row_offsets(&self, i: usize) -> Vec<usize> {
        let op = &self.terms[i].op;
        (0..=op.structure().num_edges())
            .map(|m| op.row_offset(m))
            .collect()
    }

    /// Initial state: `x0` per [`Init`], `z_i = D_i x0`, `u_i = 0`.
    pub fn initial_state(&self) -> Result<ChainState> {
        self.validate()?;
        let x = match &self.init {
            Init::Zero => vec![0.0; self.dim()],
            Init::Given(x) => x.clone(),
            Init::BackProjected => {
                let t = self
                    .terms
                    .iter()
                    .find(|t| matches!(t.g, Coupling::Poisson { .. }))
                    .ok_or_else(|| {
                        Error::InvalidParameter("back-projection needs observations".into())
                    })?;
                let Coupling::Poisson { y } = &t.g else {
                    unreachable!()
                };
                t.op.apply_adjoint(y)?
                    .into_iter()
                    .map(prox_nonneg)
                    .collect()
            }
        };
        let v: Vec<Vec<f64>> = self
            .terms
            .iter()
            .map(|t| t.op.apply(&x))
            .collect::<Result<_>>()?;
        let u = v.iter().map(|vi| vec![0.0; vi.len()]).collect();
        Ok(ChainState {
            z: v.clone(),
            x,
            v,
            u,
        })
    }

    /// `f(x) + h(x) + Σ g_i(v_i)` with `v_i = D_i x` already computed.
    pub fn potential_from(&self, x: &[f64], v: &[Vec<f64>]) -> f64 {
        let mut p = self.f.value(x) + self.h.value(x);
        for (i, t) in self.terms.iter().enumerate() {
            p += t.g.value(&v[i], &self.row_offsets(i));
        }
        p
    }

    /// Negative log augmented density (up to a constant):
    /// `f(x) + h(x) + Σ g_i(z_i) + |v_i - z_i + u_i|^2 / (2 α_i^2) + |u_i|^2 / (2 β_i^2)`.
    pub fn augmented_potential(&self, s: &ChainState) -> f64 {
        let mut p = self.f.value(&s.x) + self.h.value(&s.x);
        for (i, t) in self.terms.iter().enumerate() {
            p += t.g.value(&s.z[i], &self.row_offsets(i));
            let (a2, b2) = (self.params.alpha2[i], self.params.beta2[i]);
            for ((v, z), u) in s.v[i].iter().zip(&s.z[i]).zip(&s.u[i]) {
                p += (v - z + u).powi(2) / (2.0 * a2) + u * u / (2.0 * b2);
            }
        }
        p
    }

    /// Negative log target density (up to a constant) at `x`.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        let v: Vec<Vec<f64>> = self
            .terms
            .iter()
            .map(|t| t.op.apply(x))
            .collect::<Result<_>>()?;
        Ok(self.potential_from(x, &v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(i: usize) -> AxdaParams {
        AxdaParams {
            alpha2: vec![1.0; i],
            beta2: vec![1.0; i],
            gamma: 0.1,
            eta: vec![0.5; i],
            kappa: 1.0,
            lambda_h: 0.0,
        }
    }

    fn deconv_like(y: Vec<f64>) -> Problem {
        let grad = crate::linops::Grad2DOperator::new(2, 2)
            .to_block_sparse()
            .unwrap();
        Problem {
            terms: vec![
                Term {
                    op: BlockSparseOperator::identity(4),
                    g: Coupling::Poisson { y },
                },
                Term {
                    op: grad,
                    g: Coupling::GroupL21 { weight: 1.0 },
                },
            ],
            f: PriorF::NonNegative,
            h: SmoothH::None,
            params: params(2),
            init: Init::Zero,
        }
    }

    #[test]
    fn potential_examples() {
        let p = deconv_like(vec![0.0; 4]);
        assert_eq!(p.potential(&[0.0; 4]).unwrap(), 0.0);
        let p = deconv_like(vec![0.0, 2.0, 0.0, 0.0]);
        assert_eq!(p.potential(&[0.0; 4]).unwrap(), f64::INFINITY);
        let p = deconv_like(vec![1.0; 4]);
        assert_eq!(p.potential(&[1.0; 4]).unwrap(), 4.0);
        assert_eq!(p.potential(&[1.0, 1.0, -1.0, 1.0]).unwrap(), f64::INFINITY);
        // [[0,1],[0,0]]: gradient norms 1 at (0,0) and (0,1), Poisson part 1
        let p = deconv_like(vec![0.0; 4]);
        assert_eq!(p.potential(&[0.0, 1.0, 0.0, 0.0]).unwrap(), 3.0);
    }

    #[test]
    fn augmented_potential_by_hand() {
        let p = deconv_like(vec![1.0; 4]);
        let mut s = p.initial_state().unwrap();
        s.x = vec![1.0; 4];
        s.v = vec![vec![1.0; 4], vec![0.0; 8]];
        s.z = vec![vec![1.0; 4], vec![0.0; 8]];
        s.u = vec![vec![0.0; 4], vec![0.0; 8]];
        assert_eq!(p.augmented_potential(&s), p.potential(&s.x).unwrap());
        // one coupling residual of 2 and one u entry of 1, unit scales
        s.z[1][0] = -1.0;
        s.u[1][0] = 1.0;
        assert_eq!(p.augmented_potential(&s), 4.0 + 1.0 + 2.0 + 0.5);
    }

    #[test]
    fn back_projected_init() {
        let mut p = deconv_like(vec![1.0, 0.0, 3.0, 2.0]);
        p.init = Init::BackProjected;
        let s = p.initial_state().unwrap();
        assert_eq!(s.x, vec![1.0, 0.0, 3.0, 2.0]);
        assert_eq!(s.z, s.v);
        assert!(s.u.iter().flatten().all(|&u| u == 0.0));
    }

    #[test]
    fn quadratic_proxes() {
        let f = PriorF::Quadratic {
            center: 2.0,
            precision: 3.0,
        };
        let z = f.prox(1.0, 0.5);
        // minimizer of 1.5 (z-2)^2 + (z-1)^2 / 1
        assert!((z - (1.0 + 0.5 * 3.0 * 2.0) / 2.5).abs() < 1e-15);
        let g = LocalCoupling::Quadratic {
            center: -1.0,
            precision: 2.0,
        };
        let mut q = [3.0];
        g.prox_block(&mut q, 0, 0.25);
        assert!((q[0] - (3.0 - 0.5) / 1.5).abs() < 1e-15);
    }
}
