//! Triangular solves on the leading `n x n` block of an upper-triangular
//! matrix.

use crate::wspace::{CMatrix, CVector, C64};

/// Solve `R x = b` by back substitution, `R` the leading `b.len()` block.
pub fn solve_upper(r: &CMatrix, b: &CVector) -> CVector {
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Solve `R* y = b` by forward substitution, `R` the leading `b.len()` block.
pub fn solve_upper_adjoint(r: &CMatrix, b: &CVector) -> CVector {
    let n = b.len();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for j in 0..i {
            s -= r[(j, i)].conj() * y[j];
        }
        y[i] = s / r[(i, i)].conj();
    }
    y
}

/// `R z` using only the upper triangle of the leading `z.len()` block.
pub fn upper_mul(r: &CMatrix, z: &CVector) -> CVector {
    let n = z.len();
    CVector::from_iterator(
        n,
        (0..n).map(|i| (i..n).map(|j| r[(i, j)] * z[j]).sum::<C64>()),
    )
}
