//! Compressed sparse row storage with a shared sparsity pattern.
//!
//! All pencil matrices of one mesh share a single [`SparsePattern`], so
//! linear combinations are plain value-array operations and the symbolic
//! factorization is computed once per mesh.

use std::io::Write;
use std::ops::{AddAssign, Mul};
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::lu::SymbolicLu;

/// Structurally symmetric CSR pattern with sorted column indices.
#[derive(Debug)]
pub struct SparsePattern {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    /// For entry p = (i, j), the position of (j, i).
    transpose_pos: Vec<usize>,
    symbolic: OnceLock<Arc<SymbolicLu>>,
}

impl SparsePattern {
    /// Build from (row, col) pairs; duplicates are merged and the pattern is
    /// symmetrized, diagonal included.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut rows: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (i, j) in pairs {
            rows[i].push(j);
            rows[j].push(i);
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let mut pattern = Self {
            n,
            row_ptr,
            col_idx,
            transpose_pos: Vec::new(),
            symbolic: OnceLock::new(),
        };
        let tpos = (0..n)
            .flat_map(|i| pattern.row_range(i).map(move |p| (i, p)))
            .map(|(i, p)| {
                pattern
                    .find(pattern.col_idx[p], i)
                    .expect("pattern is symmetric")
            })
            .collect();
        pattern.transpose_pos = tpos;
        pattern
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        self.row_ptr[i]..self.row_ptr[i + 1]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn transpose_pos(&self) -> &[usize] {
        &self.transpose_pos
    }

    /// Position of entry (i, j), if stored.
    pub fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_range(i);
        self.col_idx[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    /// Symbolic LDU analysis of this pattern, computed on first use.
    pub fn symbolic_lu(&self) -> &Arc<SymbolicLu> {
        self.symbolic
            .get_or_init(|| Arc::new(SymbolicLu::analyze(self)))
    }
}

/// Sparse matrix over a shared pattern.
#[derive(Debug, Clone)]
pub struct CsrMatrix<T> {
    pattern: Arc<SparsePattern>,
    values: Vec<T>,
}

impl<T: Copy> CsrMatrix<T> {
    pub fn new(pattern: Arc<SparsePattern>, values: Vec<T>) -> Result<Self> {
        if values.len() != pattern.nnz() {
            return Err(Error::Dimension {
                expected: pattern.nnz(),
                got: values.len(),
            });
        }
        Ok(Self { pattern, values })
    }

    pub fn zeros(pattern: Arc<SparsePattern>) -> Self
    where
        T: Default,
    {
        let values = vec![T::default(); pattern.nnz()];
        Self { pattern, values }
    }

    pub fn pattern(&self) -> &Arc<SparsePattern> {
        &self.pattern
    }

    pub fn n(&self) -> usize {
        self.pattern.n()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.pattern.find(i, j).map(|p| self.values[p])
    }

    /// y = A x
    pub fn mul_vec_into<V>(&self, x: &[V], y: &mut [V])
    where
        V: Copy + Default + AddAssign + Mul<T, Output = V>,
    {
        let cols = self.pattern.col_idx();
        for (i, yi) in y.iter_mut().enumerate() {
            let r = self.pattern.row_range(i);
            let mut acc = V::default();
            for (&c, &v) in cols[r.clone()].iter().zip(&self.values[r]) {
                acc += x[c] * v;
            }
            *yi = acc;
        }
    }

    pub fn mul_vec<V>(&self, x: &[V]) -> Vec<V>
    where
        V: Copy + Default + AddAssign + Mul<T, Output = V>,
    {
        let mut y = vec![V::default(); self.n()];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// y = Aᵀ x
    pub fn mul_transpose_vec<V>(&self, x: &[V]) -> Vec<V>
    where
        V: Copy + Default + AddAssign + Mul<T, Output = V>,
    {
        let tpos = self.pattern.transpose_pos();
        let cols = self.pattern.col_idx();
        let mut y = vec![V::default(); self.n()];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = V::default();
            for p in self.pattern.row_range(i) {
                acc += x[cols[p]] * self.values[tpos[p]];
            }
            *yi = acc;
        }
        y
    }
}

impl CsrMatrix<f64> {
    /// Largest |a_ij - s·a_ji|; zero means exactly symmetric (s = 1) or
    /// skew-symmetric (s = -1).
    pub fn max_asymmetry(&self, sign: f64) -> f64 {
        let tpos = self.pattern.transpose_pos();
        self.values
            .iter()
            .zip(tpos)
            .map(|(&a, &t)| (a - sign * self.values[t]).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n())
            .map(|i| {
                self.pattern
                    .row_range(i)
                    .map(|p| self.values[p].abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Dense copy, for small-problem oracles.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.n();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        let cols = self.pattern.col_idx();
        for i in 0..n {
            for p in self.pattern.row_range(i) {
                d[(i, cols[p])] = self.values[p];
            }
        }
        d
    }

    /// Coordinate text exchange format with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n();
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{n} {n} {}", self.pattern.nnz())?;
        let cols = self.pattern.col_idx();
        for i in 0..n {
            for p in self.pattern.row_range(i) {
                writeln!(w, "{} {} {:.17e}", i + 1, cols[p] + 1, self.values[p])?;
            }
        }
        Ok(())
    }
}
