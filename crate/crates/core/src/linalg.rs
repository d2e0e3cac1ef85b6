//! Sparse matrices over the tabular state space and a direct solver for
//! level-structured systems.
//!
//! States are indexed `queue_len · 2^k + busy`, and one epoch moves the queue
//! length by at most one level (a routing decision lowers it, an arrival
//! raises it), so every matrix built from the transition kernel is block
//! tridiagonal with `2^k × 2^k` blocks. Block Gaussian elimination solves
//! those systems exactly in `O(levels · 8^k)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    ncols: usize,
}

impl SparseRows {
    /// Builds from per-row `(column, value)` lists; duplicates are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, ncols: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|(c, _)| *c);
            let start = cols.len();
            for (c, v) in row {
                debug_assert!(c < ncols);
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseRows {
            row_ptr,
            cols,
            vals,
            ncols,
        }
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `yᵀ A`.
    pub fn left_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, yi) in y.iter().enumerate() {
            if *yi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += yi * v;
            }
        }
        out
    }
}

/// Block-tridiagonal system with `levels` diagonal blocks of size `block`.
/// Entries are accumulated with [`LevelSystem::add`] using global indices.
pub(crate) struct LevelSystem {
    block: usize,
    diag: Vec<DMatrix<f64>>,
    /// Coupling of level `l` to level `l - 1` (unused for `l = 0`).
    lower: Vec<Vec<(usize, usize, f64)>>,
    /// Coupling of level `l` to level `l + 1` (unused for the last level).
    upper: Vec<Vec<(usize, usize, f64)>>,
}

impl LevelSystem {
    pub fn new(levels: usize, block: usize) -> Self {
        LevelSystem {
            block,
            diag: (0..levels).map(|_| DMatrix::zeros(block, block)).collect(),
            lower: vec![Vec::new(); levels],
            upper: vec![Vec::new(); levels],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len() * self.block
    }

    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let (lr, ir) = (row / self.block, row % self.block);
        let (lc, ic) = (col / self.block, col % self.block);
        if lr == lc {
            self.diag[lr][(ir, ic)] += value;
        } else if lc + 1 == lr {
            self.lower[lr].push((ir, ic, value));
        } else if lr + 1 == lc {
            self.upper[lr].push((ir, ic, value));
        } else {
            panic!("entry ({row}, {col}) couples non-adjacent levels");
        }
    }

    /// Clears every entry of a row (all three blocks).
    pub fn clear_row(&mut self, row: usize) {
        let (lr, ir) = (row / self.block, row % self.block);
        self.diag[lr].row_mut(ir).fill(0.0);
        self.lower[lr].retain(|(i, _, _)| *i != ir);
        self.upper[lr].retain(|(i, _, _)| *i != ir);
    }

    /// Solves `A x = rhs` by block LU (partial pivoting inside each block).
    pub fn solve(self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = self.block;
        let levels = self.diag.len();
        assert_eq!(rhs.len(), levels * m);

        let mut carry: Vec<DMatrix<f64>> = Vec::with_capacity(levels);
        let mut partial: Vec<DVector<f64>> = Vec::with_capacity(levels);

        for (l, mut schur) in self.diag.into_iter().enumerate() {
            let mut b = DVector::from_column_slice(&rhs[l * m..(l + 1) * m]);
            if l > 0 {
                let prev_c = &carry[l - 1];
                let prev_d = &partial[l - 1];
                for &(i, j, v) in &self.lower[l] {
                    let row = prev_c.row(j) * v;
                    let mut target = schur.row_mut(i);
                    target -= row;
                    b[i] -= v * prev_d[j];
                }
            }
            let lu = schur.lu();
            let singular = || Error::SingularSystem(format!("pivot block at level {l} is singular"));
            if l + 1 < levels {
                let mut coupling = DMatrix::zeros(m, m);
                for &(i, j, v) in &self.upper[l] {
                    coupling[(i, j)] += v;
                }
                carry.push(lu.solve(&coupling).ok_or_else(singular)?);
            } else {
                carry.push(DMatrix::zeros(0, 0));
            }
            partial.push(lu.solve(&b).ok_or_else(singular)?);
        }

        let mut x = vec![0.0; levels * m];
        let mut next: Option<DVector<f64>> = None;
        for l in (0..levels).rev() {
            let mut xl = partial[l].clone();
            if let Some(nx) = &next {
                xl -= &carry[l] * nx;
            }
            if xl.iter().any(|v| !v.is_finite()) {
                return Err(Error::SingularSystem(format!(
                    "non-finite solution at level {l}"
                )));
            }
            x[l * m..(l + 1) * m].copy_from_slice(xl.as_slice());
            next = Some(xl);
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sparse_products() {
        let a = SparseRows::from_rows(vec![vec![(0, 1.0), (2, 2.0), (0, 0.5)], vec![(1, 3.0)]], 3);
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.mul_vec(&[1.0, 1.0, 1.0]), vec![3.5, 3.0]);
        assert_eq!(a.left_mul(&[1.0, 2.0]), vec![1.5, 6.0, 2.0]);
    }

    #[test]
    fn block_solver_matches_dense() {
        let levels = 5;
        let block = 3;
        let n = levels * block;
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut sys = LevelSystem::new(levels, block);
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for r in 0..n {
            for c in 0..n {
                let (lr, lc) = (r / block, c / block);
                if lr.abs_diff(lc) <= 1 {
                    let v = if r == c { 4.0 + next() } else { next() };
                    dense[(r, c)] = v;
                    sys.add(r, c, v);
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = sys.solve(&rhs).unwrap();
        let want = dense.lu().solve(&DVector::from_vec(rhs)).unwrap();
        for i in 0..n {
            assert_relative_eq!(x[i], want[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn clear_row_then_pin() {
        let mut sys = LevelSystem::new(2, 1);
        sys.add(0, 0, 1.0);
        sys.add(0, 1, -1.0);
        sys.add(1, 0, -1.0);
        sys.add(1, 1, 2.0);
        sys.clear_row(0);
        sys.add(0, 0, 1.0);
        let x = sys.solve(&[3.0, 0.0]).unwrap();
        assert_relative_eq!(x[0], 3.0);
        assert_relative_eq!(x[1], 1.5);
        assert_eq!(LevelSystem::new(3, 2).len(), 6);
    }
}
