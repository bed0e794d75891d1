//! Linear operators: generic block-sparse matrices, zero-padded 2D
//! convolution and the discrete gradient, plus per-worker slices used by the
//! distributed sampler.

mod block_sparse;
mod conv;
mod grad;
mod local;

pub use block_sparse::BlockSparseOperator;
pub use conv::{gaussian_kernel, Conv2DOperator};
pub use grad::Grad2DOperator;
pub use local::{LocalOperator, SerialAdjoint, WorkerLayout};

use crate::error::{Error, Result};

/// Safety factor applied to power-iteration norm estimates.
pub const NORM_SAFETY: f64 = 1.05;

pub trait LinearOperator {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint_into(&self, d: &[f64], out: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), x.len())?;
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    fn apply_adjoint(&self, d: &[f64]) -> Result<Vec<f64>> {
        check_len(self.output_dim(), d.len())?;
        let mut out = vec![0.0; self.input_dim()];
        self.apply_adjoint_into(d, &mut out);
        Ok(out)
    }

    /// Upper bound on the squared operator norm.
    fn operator_norm_sq(&self, iters: usize) -> f64 {
        power_norm_sq(self, iters) * NORM_SAFETY
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Power-iteration estimate of the largest eigenvalue of `D* D`, without
/// safety margin.
pub fn power_norm_sq<Op: LinearOperator + ?Sized>(op: &Op, iters: usize) -> f64 {
    let n = op.input_dim();
    let mut x: Vec<f64> = (0..n)
        .map(|j| 0.5 + ((j as u64).wrapping_mul(2_654_435_761) % 1000) as f64 / 1000.0)
        .collect();
    normalize(&mut x);
    let mut y = vec![0.0; op.output_dim()];
    let mut est = 0.0;
    for _ in 0..iters.max(1) {
        op.apply_into(&x, &mut y);
        est = y.iter().map(|v| v * v).sum::<f64>();
        op.apply_adjoint_into(&y, &mut x);
        if normalize(&mut x) == 0.0 {
            return 0.0;
        }
    }
    est
}

fn normalize(x: &mut [f64]) -> f64 {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
    norm
}
