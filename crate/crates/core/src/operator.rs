//! Matrix-vector actions for the iteration matrix `T`.

use crate::error::{check_dim, Result};
use crate::wspace::{CMatrix, CVector, C64};

/// Compressed sparse row storage. Explicit zeros are kept.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl SparseMatrix {
    /// Build from zero-based `(row, col, value)` triplets; duplicates are
    /// summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, C64)]) -> Self {
        let mut sorted = triplets.to_vec();
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<C64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
                continue;
            }
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
            last = Some((i, j));
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix { nrows, ncols, row_ptr, col_idx, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    /// Stored entries, including explicit zeros.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |p| (i, self.col_idx[p], self.values[p]))
        })
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &CVector) -> CVector {
        CVector::from_iterator(
            self.nrows,
            (0..self.nrows).map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1]).map(|p| self.values[p] * x[self.col_idx[p]]).sum::<C64>()
            }),
        )
    }
}

/// A square iteration matrix, dense or sparse.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearMap {
    Dense(CMatrix),
    Sparse(SparseMatrix),
}

impl LinearMap {
    pub fn nrows(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.nrows(),
            LinearMap::Sparse(s) => s.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinearMap::Dense(m) => m.ncols(),
            LinearMap::Sparse(s) => s.ncols(),
        }
    }

    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        check_dim(self.ncols(), x.len())?;
        Ok(match self {
            LinearMap::Dense(m) => m * x,
            LinearMap::Sparse(s) => s.mul_vec(x),
        })
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            LinearMap::Dense(m) => m.clone(),
            LinearMap::Sparse(s) => s.to_dense(),
        }
    }

    /// `(I - T) x`, never forming `I - T`.
    pub fn apply_shifted(&self, x: &CVector) -> Result<CVector> {
        Ok(x - self.apply(x)?)
    }
}
