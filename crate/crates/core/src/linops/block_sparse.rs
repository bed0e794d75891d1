use serde::Deserialize;

use super::LinearOperator;
use crate::error::{Error, Result};
use crate::hypergraph::OperatorStructure;

/// Linear map stored as dense row-major blocks at the nonzero positions of
/// an [`OperatorStructure`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseOperator {
    structure: OperatorStructure,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
    block_ptr: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
struct Triplet {
    m: usize,
    n: usize,
    block: Vec<Vec<f64>>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut off = Vec::with_capacity(dims.len() + 1);
    off.push(0);
    for d in dims {
        off.push(off.last().unwrap() + d);
    }
    off
}

impl BlockSparseOperator {
    /// `blocks` holds one row-major block per nonzero, in row-major nonzero
    /// order of `structure`.
    pub fn new(structure: OperatorStructure, blocks: Vec<Vec<f64>>) -> Result<Self> {
        if blocks.len() != structure.nnz() {
            return Err(Error::DimensionMismatch {
                expected: structure.nnz(),
                actual: blocks.len(),
            });
        }
        let mut block_ptr = Vec::with_capacity(blocks.len() + 1);
        let mut values = Vec::new();
        block_ptr.push(0);
        for ((m, n), b) in structure.nonzeros().zip(&blocks) {
            let size = structure.row_dims()[m] * structure.col_dims()[n];
            if b.len() != size {
                return Err(Error::InvalidStructure(format!(
                    "block ({m}, {n}) has {} entries, expected {size}",
                    b.len()
                )));
            }
            values.extend_from_slice(b);
            block_ptr.push(values.len());
        }
        Ok(Self {
            row_offsets: offsets(structure.row_dims()),
            col_offsets: offsets(structure.col_dims()),
            structure,
            block_ptr,
            values,
        })
    }

    /// Builds from `(m, n, block)` triplets; block dims must be consistent.
    pub fn from_triplets(
        row_dims: Vec<usize>,
        col_dims: Vec<usize>,
        triplets: Vec<(usize, usize, Vec<Vec<f64>>)>,
    ) -> Result<Self> {
        let structure = OperatorStructure::new(
            row_dims.clone(),
            col_dims.clone(),
            triplets.iter().map(|(m, n, _)| (*m, *n)),
        )?;
        if structure.nnz() != triplets.len() {
            return Err(Error::InvalidStructure("duplicate block position".into()));
        }
        let mut flat: Vec<((usize, usize), Vec<f64>)> = Vec::with_capacity(triplets.len());
        for (m, n, block) in triplets {
            if block.len() != row_dims[m] || block.iter().any(|r| r.len() != col_dims[n]) {
                return Err(Error::InvalidStructure(format!(
                    "block ({m}, {n}) is not {}x{}",
                    row_dims[m], col_dims[n]
                )));
            }
            flat.push(((m, n), block.into_iter().flatten().collect()));
        }
        flat.sort_by_key(|(pos, _)| *pos);
        Self::new(structure, flat.into_iter().map(|(_, b)| b).collect())
    }

    /// Parses a JSON list of `{m, n, block}` triplets with scalar blocks
    /// unless the block shape says otherwise; dims are inferred as the
    /// maximum block shape seen per row/column.
    pub fn from_json(text: &str) -> Result<Self> {
        let triplets: Vec<Triplet> = serde_json::from_str(text)?;
        let m_count = triplets.iter().map(|t| t.m + 1).max().unwrap_or(0);
        let n_count = triplets.iter().map(|t| t.n + 1).max().unwrap_or(0);
        let mut row_dims = vec![0; m_count];
        let mut col_dims = vec![0; n_count];
        for t in &triplets {
            row_dims[t.m] = t.block.len();
            col_dims[t.n] = t.block.first().map_or(0, Vec::len);
        }
        Self::from_triplets(
            row_dims,
            col_dims,
            triplets.into_iter().map(|t| (t.m, t.n, t.block)).collect(),
        )
    }

    /// Identity with `n` scalar blocks.
    pub fn identity(n: usize) -> Self {
        let s = OperatorStructure::new(vec![1; n], vec![1; n], (0..n).map(|i| (i, i)))
            .expect("identity pattern is valid");
        Self::new(s, vec![vec![1.0]; n]).expect("identity blocks are valid")
    }

    pub fn structure(&self) -> &OperatorStructure {
        &self.structure
    }

    /// Element offset of row block `m` in the output vector.
    pub fn row_offset(&self, m: usize) -> usize {
        self.row_offsets[m]
    }

    /// Element offset of column block `n` in the input vector.
    pub fn col_offset(&self, n: usize) -> usize {
        self.col_offsets[n]
    }

    /// Row-major values of the `j`-th nonzero block.
    pub fn block_at(&self, j: usize) -> &[f64] {
        &self.values[self.block_ptr[j]..self.block_ptr[j + 1]]
    }

    pub fn block(&self, m: usize, n: usize) -> Option<&[f64]> {
        self.structure.block_index(m, n).map(|j| self.block_at(j))
    }

    /// Computes row block `m` of `D x`, accumulating over the edge's vertices
    /// in ascending order with one accumulator per output element.
    #[inline]
    pub(crate) fn row_apply(
        &self,
        m: usize,
        x: &[f64],
        col_off: impl Fn(usize) -> usize,
        out: &mut [f64],
    ) {
        let rows = out.len();
        let range = self.structure.row_range(m);
        let edge = self.structure.edge(m);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &n) in range.clone().zip(edge) {
                let b = self.block_at(j);
                let cols = b.len() / rows;
                let xo = col_off(n);
                let brow = &b[r * cols..(r + 1) * cols];
                for (c, &bv) in brow.iter().enumerate() {
                    acc += bv * x[xo + c];
                }
            }
            *o = acc;
        }
    }
}

impl LinearOperator for BlockSparseOperator {
    fn input_dim(&self) -> usize {
        *self.col_offsets.last().unwrap()
    }

    fn output_dim(&self) -> usize {
        *self.row_offsets.last().unwrap()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for m in 0..self.structure.num_edges() {
            let o = &mut out[self.row_offsets[m]..self.row_offsets[m + 1]];
            self.row_apply(m, x, |n| self.col_offsets[n], o);
        }
    }

    fn apply_adjoint_into(&self, d: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for m in 0..self.structure.num_edges() {
            let dm = &d[self.row_offsets[m]..self.row_offsets[m + 1]];
            let rows = dm.len();
            for (j, &n) in self.structure.row_range(m).zip(self.structure.edge(m)) {
                let b = self.block_at(j);
                let cols = b.len() / rows;
                let target = &mut out[self.col_offsets[n]..self.col_offsets[n] + cols];
                for (c, t) in target.iter_mut().enumerate() {
                    for (r, &dv) in dm.iter().enumerate() {
                        *t += b[r * cols + c] * dv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::testing::{adjoint_gap, dense, Lcg};

    pub(crate) fn random_operator(
        rng: &mut Lcg,
        m_count: usize,
        n_count: usize,
    ) -> BlockSparseOperator {
        let row_dims: Vec<usize> = (0..m_count)
            .map(|_| 1 + (rng.next().abs() * 2.0) as usize)
            .collect();
        let col_dims: Vec<usize> = (0..n_count)
            .map(|_| 1 + (rng.next().abs() * 2.0) as usize)
            .collect();
        let mut nz = Vec::new();
        for m in 0..m_count {
            nz.push((m, m % n_count));
            for n in 0..n_count {
                if rng.next() > 0.6 {
                    nz.push((m, n));
                }
            }
        }
        for n in 0..n_count {
            nz.push((n % m_count, n));
        }
        let s = OperatorStructure::new(row_dims.clone(), col_dims.clone(), nz).unwrap();
        let blocks = s
            .nonzeros()
            .map(|(m, n)| rng.vec(row_dims[m] * col_dims[n]))
            .collect();
        BlockSparseOperator::new(s, blocks).unwrap()
    }

    #[test]
    fn identity_applies_as_identity() {
        let op = BlockSparseOperator::identity(5);
        let x = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(op.apply(&x).unwrap(), x);
        assert_eq!(op.apply_adjoint(&x).unwrap(), x);
        assert!(matches!(
            op.apply(&x[..3]),
            Err(Error::DimensionMismatch {
                expected: 5,
                actual: 3
            })
        ));
    }

    #[test]
    fn adjoint_identity_random() {
        let mut rng = Lcg(7);
        for trial in 0..100 {
            let op = random_operator(&mut rng, 3 + trial % 9, 2 + trial % 7);
            assert!(adjoint_gap(&op, &mut rng) < 1e-10);
        }
    }

    #[test]
    fn adjoint_is_dense_transpose() {
        let mut rng = Lcg(3);
        let op = random_operator(&mut rng, 6, 5);
        let cols = dense(&op);
        let d = rng.vec(op.output_dim());
        let at = op.apply_adjoint(&d).unwrap();
        for (j, col) in cols.iter().enumerate() {
            let expect: f64 = col.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!((at[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn json_triplets() {
        let op = BlockSparseOperator::from_json(
            r#"[{"m":0,"n":0,"block":[[1.0],[2.0]]},{"m":0,"n":1,"block":[[3.0],[4.0]]},{"m":1,"n":1,"block":[[5.0]]}]"#,
        )
        .unwrap();
        assert_eq!(op.apply(&[1.0, 1.0]).unwrap(), vec![4.0, 6.0, 5.0]);
        assert_eq!(op.block(0, 1), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn identity_norm() {
        let op = BlockSparseOperator::identity(10);
        assert!((op.operator_norm_sq(20) - 1.05).abs() < 1e-12);
    }
}
