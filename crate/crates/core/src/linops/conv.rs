use super::{power_norm_sq, BlockSparseOperator, LinearOperator, NORM_SAFETY};
use crate::error::{Error, Result};
use crate::hypergraph::OperatorStructure;

/// Zero-padded "same" 2D convolution of an `H x W` image with an odd-sized
/// kernel. Output pixel `(r, c)` is a hyperedge touching the in-bounds
/// pixels under the flipped kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2DOperator {
    height: usize,
    width: usize,
    kernel: Vec<f64>,
    krows: usize,
    kcols: usize,
}

/// Normalized Gaussian kernel of size `rows x cols` with standard deviation
/// `rows / 6`, truncated to the window.
pub fn gaussian_kernel(rows: usize, cols: usize) -> Vec<f64> {
    let sigma = rows as f64 / 6.0;
    let (hr, hc) = ((rows / 2) as f64, (cols / 2) as f64);
    let mut k: Vec<f64> = (0..rows * cols)
        .map(|i| {
            let dr = (i / cols) as f64 - hr;
            let dc = (i % cols) as f64 - hc;
            (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

impl Conv2DOperator {
    pub fn new(
        height: usize,
        width: usize,
        kernel: Vec<f64>,
        krows: usize,
        kcols: usize,
    ) -> Result<Self> {
        if krows % 2 == 0 || kcols % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "kernel size {krows}x{kcols} must be odd"
            )));
        }
        if kernel.len() != krows * kcols {
            return Err(Error::DimensionMismatch {
                expected: krows * kcols,
                actual: kernel.len(),
            });
        }
        if kernel.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "kernel has non-finite entries".into(),
            ));
        }
        if !kernel.iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidParameter("kernel is identically zero".into()));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter("empty image".into()));
        }
        Ok(Self {
            height,
            width,
            kernel,
            krows,
            kcols,
        })
    }

    /// Parses a kernel from rows of whitespace-separated decimals.
    pub fn parse_kernel(text: &str) -> Result<(Vec<f64>, usize, usize)> {
        let mut rows = 0;
        let mut cols = None;
        let mut values = Vec::new();
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::BadFormat(format!("kernel entry {t:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::BadFormat(format!(
                        "kernel row {rows} has {} entries, expected {c}",
                        row.len()
                    )))
                }
                _ => {}
            }
            values.extend(row);
            rows += 1;
        }
        let cols = cols.ok_or_else(|| Error::BadFormat("empty kernel file".into()))?;
        Ok((values, rows, cols))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    pub fn kernel_dims(&self) -> (usize, usize) {
        (self.krows, self.kcols)
    }

    pub fn half_widths(&self) -> (usize, usize) {
        (self.krows / 2, self.kcols / 2)
    }

    fn is_normalized_nonneg(&self) -> bool {
        self.kernel.iter().all(|&v| v >= 0.0)
            && (self.kernel.iter().sum::<f64>() - 1.0).abs() < 1e-12
    }

    /// Visits `(input pixel, tap)` pairs of output pixel `(r, c)` in
    /// ascending input order, skipping zero taps and the padding.
    #[inline]
    fn for_taps(&self, r: usize, c: usize, mut f: impl FnMut(usize, f64)) {
        let (h1, h2) = (self.krows as isize / 2, self.kcols as isize / 2);
        for dr in -h1..=h1 {
            let rr = r as isize + dr;
            if rr < 0 || rr >= self.height as isize {
                continue;
            }
            for dc in -h2..=h2 {
                let cc = c as isize + dc;
                if cc < 0 || cc >= self.width as isize {
                    continue;
                }
                let tap = self.kernel[((h1 - dr) * self.kcols as isize + (h2 - dc)) as usize];
                if tap != 0.0 {
                    f(rr as usize * self.width + cc as usize, tap);
                }
            }
        }
    }

    /// Fails when the pattern leaves a pixel untouched, which only happens
    /// for kernels with zero centre tap on tiny images.
    pub fn to_block_sparse(&self) -> Result<BlockSparseOperator> {
        let n = self.height * self.width;
        let mut nz = Vec::new();
        let mut blocks = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let m = r * self.width + c;
                self.for_taps(r, c, |n, tap| {
                    nz.push((m, n));
                    blocks.push(vec![tap]);
                });
            }
        }
        let s = OperatorStructure::new(vec![1; n], vec![1; n], nz)?;
        BlockSparseOperator::new(s, blocks)
    }
}

impl LinearOperator for Conv2DOperator {
    fn input_dim(&self) -> usize {
        self.height * self.width
    }

    fn output_dim(&self) -> usize {
        self.height * self.width
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for r in 0..self.height {
            for c in 0..self.width {
                let mut acc = 0.0;
                self.for_taps(r, c, |n, tap| acc += tap * x[n]);
                out[r * self.width + c] = acc;
            }
        }
    }

    fn apply_adjoint_into(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.height {
            for c in 0..self.width {
                let dm = d[r * self.width + c];
                self.for_taps(r, c, |n, tap| out[n] += tap * dm);
            }
        }
    }

    fn operator_norm_sq(&self, iters: usize) -> f64 {
        let est = power_norm_sq(self, iters) * NORM_SAFETY;
        if self.is_normalized_nonneg() {
            est.min(1.0)
        } else {
            est
        }
    }
}
