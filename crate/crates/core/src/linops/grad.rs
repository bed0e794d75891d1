use super::{power_norm_sq, BlockSparseOperator, LinearOperator, NORM_SAFETY};
use crate::error::Result;
use crate::hypergraph::OperatorStructure;

/// Forward-difference discrete gradient of an `H x W` image. Output pixel
/// `n` holds the pair (vertical, horizontal), interleaved, with zero
/// differences at the trailing row and column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grad2DOperator {
    height: usize,
    width: usize,
}

impl Grad2DOperator {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Each output pixel is a 2x1 block row touching itself and, when in
    /// bounds, its right and lower neighbors. The diagonal block is kept
    /// even at the bottom-right corner where it is numerically zero.
    pub fn to_block_sparse(&self) -> Result<BlockSparseOperator> {
        let (h, w) = (self.height, self.width);
        let n = h * w;
        let mut nz = Vec::with_capacity(3 * n);
        let mut blocks = Vec::with_capacity(3 * n);
        for r in 0..h {
            for c in 0..w {
                let m = r * w + c;
                let down = r + 1 < h;
                let right = c + 1 < w;
                nz.push((m, m));
                blocks.push(vec![
                    if down { -1.0 } else { 0.0 },
                    if right { -1.0 } else { 0.0 },
                ]);
                if right {
                    nz.push((m, m + 1));
                    blocks.push(vec![0.0, 1.0]);
                }
                if down {
                    nz.push((m, m + w));
                    blocks.push(vec![1.0, 0.0]);
                }
            }
        }
        let s = OperatorStructure::new(vec![2; n], vec![1; n], nz)?;
        BlockSparseOperator::new(s, blocks)
    }
}

impl LinearOperator for Grad2DOperator {
    fn input_dim(&self) -> usize {
        self.height * self.width
    }

    fn output_dim(&self) -> usize {
        2 * self.height * self.width
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        for r in 0..h {
            for c in 0..w {
                let m = r * w + c;
                out[2 * m] = if r + 1 < h { x[m + w] - x[m] } else { 0.0 };
                out[2 * m + 1] = if c + 1 < w { x[m + 1] - x[m] } else { 0.0 };
            }
        }
    }

    fn apply_adjoint_into(&self, d: &[f64], out: &mut [f64]) {
        let (h, w) = (self.height, self.width);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..h {
            for c in 0..w {
                let m = r * w + c;
                if r + 1 < h {
                    out[m] -= d[2 * m];
                    out[m + w] += d[2 * m];
                }
                if c + 1 < w {
                    out[m] -= d[2 * m + 1];
                    out[m + 1] += d[2 * m + 1];
                }
            }
        }
    }

    fn operator_norm_sq(&self, iters: usize) -> f64 {
        (power_norm_sq(self, iters) * NORM_SAFETY).min(8.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::testing::{adjoint_gap, Lcg};

    #[test]
    fn two_by_two_by_hand() {
        let g = Grad2DOperator::new(2, 2);
        let v = g.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let vert: Vec<f64> = v.iter().step_by(2).copied().collect();
        let horiz: Vec<f64> = v.iter().skip(1).step_by(2).copied().collect();
        assert_eq!(vert, vec![2.0, 2.0, 0.0, 0.0]);
        assert_eq!(horiz, vec![1.0, 0.0, 1.0, 0.0]);
        let bs = g.to_block_sparse().unwrap();
        assert_eq!(bs.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap(), v);
    }

    #[test]
    fn adjoint_of_zero_is_zero() {
        let g = Grad2DOperator::new(5, 3);
        assert!(g
            .apply_adjoint(&[0.0; 30])
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn adjoint_identity_random() {
        let mut rng = Lcg(1);
        for t in 0..100 {
            let g = Grad2DOperator::new(1 + t % 9, 1 + t % 6);
            assert!(adjoint_gap(&g, &mut rng) < 1e-10);
            let bs = g.to_block_sparse().unwrap();
            assert!(adjoint_gap(&bs, &mut rng) < 1e-10);
        }
    }

    #[test]
    fn norm_bound_at_most_eight() {
        let g = Grad2DOperator::new(16, 16);
        let b = g.operator_norm_sq(100);
        assert!(b <= 8.0);
        assert!(power_norm_sq(&g, 100) > 7.0);
    }
}
