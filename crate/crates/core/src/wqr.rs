//! Weighted QR factorization `A = Q R` with `Q* M Q = I` and `R` upper
//! triangular with a positive real diagonal.
//!
//! Modified Gram-Schmidt is the working path. Classical Gram-Schmidt is kept
//! only as an independent cross-check of uniqueness. Factors grow one column
//! at a time through [`WqrFactors::append_column`], which is how the
//! extrapolation driver builds `U_k = Q_k R_k` from `U_{k-1} = Q_{k-1} R_{k-1}`.

use crate::error::{check_dim, Error, Result};
use crate::wspace::{CMatrix, CVector, WeightOperator, C64};

/// Default relative threshold below which a deflated column is treated as
/// linearly dependent on its predecessors.
pub const DEFAULT_RANK_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrOptions {
    /// Column `j` is dependent when its deflated weighted norm is at most
    /// `rank_tol` times the weighted norm of the incoming column.
    pub rank_tol: f64,
    /// Run MGS a second time on each new column.
    pub reorthogonalize: bool,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions { rank_tol: DEFAULT_RANK_TOL, reorthogonalize: false }
    }
}

/// Result of orthogonalizing one column against an existing basis.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `rho = Q* M a` (accumulated over both passes when reorthogonalizing).
    pub coeffs: CVector,
    /// The deflated column `a - Q rho`.
    pub residual: CVector,
    /// `|||a - Q rho|||`.
    pub residual_norm: f64,
    /// `|||a|||`.
    pub incoming_norm: f64,
}

impl Projection {
    pub fn is_dependent(&self, rank_tol: f64) -> bool {
        self.residual_norm <= rank_tol * self.incoming_norm
    }
}

/// Columns `q_0..q_k` and the triangular factor `R_k`.
#[derive(Debug, Clone)]
pub struct WqrFactors {
    dim: usize,
    q: Vec<CVector>,
    /// `M q_i`, kept so inner products need one dot product each.
    mq: Vec<CVector>,
    r: CMatrix,
}

impl WqrFactors {
    /// Factors of an empty matrix with `dim` rows.
    pub fn empty(dim: usize) -> Self {
        WqrFactors { dim, q: Vec::new(), mq: Vec::new(), r: CMatrix::zeros(0, 0) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of factored columns (`k + 1`).
    pub fn ncols(&self) -> usize {
        self.q.len()
    }

    /// Index of the last column, `None` when empty.
    pub fn k(&self) -> Option<usize> {
        self.q.len().checked_sub(1)
    }

    pub fn q_col(&self, i: usize) -> &CVector {
        &self.q[i]
    }

    pub fn q_cols(&self) -> &[CVector] {
        &self.q
    }

    pub fn q_matrix(&self) -> CMatrix {
        if self.q.is_empty() {
            return CMatrix::zeros(self.dim, 0);
        }
        CMatrix::from_columns(&self.q)
    }

    pub fn r(&self) -> &CMatrix {
        &self.r
    }

    /// Leading `(j+1) x (j+1)` block, i.e. `R_j`.
    pub fn r_block(&self, j: usize) -> CMatrix {
        self.r.view((0, 0), (j + 1, j + 1)).into_owned()
    }

    /// `rho_k = [r_0k, ..., r_{k-1,k}]`.
    pub fn rho(&self, k: usize) -> CVector {
        CVector::from_iterator(k, (0..k).map(|i| self.r[(i, k)]))
    }

    /// `r_kk` as a real number.
    pub fn pivot(&self, k: usize) -> f64 {
        self.r[(k, k)].re
    }

    /// `sum_i z_i q_i` over the leading `z.len()` columns.
    pub fn combine(&self, z: &CVector) -> CVector {
        let mut out = CVector::zeros(self.dim);
        for (zi, qi) in z.iter().zip(&self.q) {
            out.axpy(*zi, qi, C64::new(1.0, 0.0));
        }
        out
    }

    /// Orthogonalize `a` against the current columns by MGS without
    /// modifying the factors.
    pub fn project(&self, a: &CVector, w: &WeightOperator, reorthogonalize: bool) -> Result<Projection> {
        check_dim(self.dim, a.len())?;
        check_dim(self.dim, w.dim())?;
        let incoming_norm = w.norm_unchecked(a);
        let mut residual = a.clone();
        let mut coeffs = CVector::zeros(self.q.len());
        let passes = if reorthogonalize { 2 } else { 1 };
        for _ in 0..passes {
            for (i, (qi, mqi)) in self.q.iter().zip(&self.mq).enumerate() {
                let rij = mqi.dotc(&residual);
                residual.axpy(-rij, qi, C64::new(1.0, 0.0));
                coeffs[i] += rij;
            }
        }
        let residual_norm = w.norm_unchecked(&residual);
        Ok(Projection { coeffs, residual, residual_norm, incoming_norm })
    }

    /// Return new factors for `[A | a_new]`. The leading columns of `Q` and
    /// the leading block of `R` are copied unchanged.
    pub fn append_column(&self, a_new: &CVector, w: &WeightOperator, opts: &QrOptions) -> Result<WqrFactors> {
        let proj = self.project(a_new, w, opts.reorthogonalize)?;
        let column = self.q.len();
        if column >= self.dim || proj.is_dependent(opts.rank_tol) {
            return Err(Error::RankDeficient { column });
        }
        Ok(self.extended(proj, w))
    }

    pub(crate) fn extended(&self, proj: Projection, w: &WeightOperator) -> WqrFactors {
        let n = self.q.len();
        let mut r = self.r.clone().resize(n + 1, n + 1, C64::new(0.0, 0.0));
        for i in 0..n {
            r[(i, n)] = proj.coeffs[i];
        }
        r[(n, n)] = C64::new(proj.residual_norm, 0.0);
        let qn = proj.residual.unscale(proj.residual_norm);
        let mqn = w.apply_unchecked(&qn);
        let mut q = self.q.clone();
        let mut mq = self.mq.clone();
        q.push(qn);
        mq.push(mqn);
        WqrFactors { dim: self.dim, q, mq, r }
    }

    /// `max_ij |(Q* M Q - I)_ij|`.
    pub fn orthogonality_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for (i, mqi) in self.mq.iter().enumerate() {
            for (j, qj) in self.q.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((mqi.dotc(qj) - C64::new(target, 0.0)).norm());
            }
        }
        dev
    }

    /// `max_j ||a_j - Q r_j|| / ||a_j||` over the factored columns.
    pub fn reconstruction_error(&self, columns: &[CVector]) -> f64 {
        columns
            .iter()
            .take(self.q.len())
            .enumerate()
            .map(|(j, a)| {
                let rj = CVector::from_iterator(j + 1, (0..=j).map(|i| self.r[(i, j)]));
                let err = (a - self.combine(&rj)).norm();
                let scale = a.norm();
                if scale > 0.0 {
                    err / scale
                } else {
                    err
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Weighted QR by modified Gram-Schmidt (`r_ij = <q_i, a_j^(i)>`).
pub fn mgs_factorize(columns: &[CVector], w: &WeightOperator, opts: &QrOptions) -> Result<WqrFactors> {
    let mut f = WqrFactors::empty(w.dim());
    for a in columns {
        f = f.append_column(a, w, opts)?;
    }
    Ok(f)
}

/// Weighted QR by classical Gram-Schmidt (`r_ij = <q_i, a_j>` against the
/// original column).
pub fn gs_factorize(columns: &[CVector], w: &WeightOperator, opts: &QrOptions) -> Result<WqrFactors> {
    let mut f = WqrFactors::empty(w.dim());
    for (j, a) in columns.iter().enumerate() {
        check_dim(f.dim, a.len())?;
        let coeffs = CVector::from_iterator(j, f.mq.iter().map(|mqi| mqi.dotc(a)));
        let residual = a - f.combine(&coeffs);
        let proj = Projection {
            residual_norm: w.norm_unchecked(&residual),
            incoming_norm: w.norm_unchecked(a),
            coeffs,
            residual,
        };
        if j >= f.dim || proj.is_dependent(opts.rank_tol) {
            return Err(Error::RankDeficient { column: j });
        }
        f = f.extended(proj, w);
    }
    Ok(f)
}

/// The difference vectors `u_i = x_{i+1} - x_i` of a sequence.
#[derive(Debug, Clone)]
pub struct DifferenceMatrix {
    columns: Vec<CVector>,
    detected_k0: Option<usize>,
}

impl DifferenceMatrix {
    pub fn from_sequence(xs: &[CVector]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::InsufficientVectors { needed: 2, got: xs.len() });
        }
        let n = xs[0].len();
        for x in xs {
            check_dim(n, x.len())?;
        }
        let columns = xs.windows(2).map(|p| &p[1] - &p[0]).collect();
        Ok(DifferenceMatrix { columns, detected_k0: None })
    }

    pub fn from_columns(columns: Vec<CVector>) -> Self {
        DifferenceMatrix { columns, detected_k0: None }
    }

    pub fn columns(&self) -> &[CVector] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn detected_k0(&self) -> Option<usize> {
        self.detected_k0
    }

    pub(crate) fn set_detected_k0(&mut self, k0: usize) {
        self.detected_k0 = Some(k0);
    }

    /// `U_k z` for `z` of length `k + 1`.
    pub fn apply(&self, z: &CVector) -> CVector {
        let n = self.columns.first().map_or(0, |c| c.len());
        let mut out = CVector::zeros(n);
        for (zi, ui) in z.iter().zip(&self.columns) {
            out.axpy(*zi, ui, C64::new(1.0, 0.0));
        }
        out
    }

    /// MGS-factorize columns `0..=k_max`, stopping at the first dependent
    /// column, which is recorded as `k0`.
    pub fn factorize(&mut self, w: &WeightOperator, k_max: usize, opts: &QrOptions) -> Result<WqrFactors> {
        let mut f = WqrFactors::empty(w.dim());
        for a in self.columns.iter().take(k_max + 1) {
            match f.append_column(a, w, opts) {
                Ok(next) => f = next,
                Err(Error::RankDeficient { column }) => {
                    self.detected_k0 = Some(column);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wspace::real_vector;
    use approx::assert_relative_eq;

    fn id(n: usize) -> WeightOperator {
        WeightOperator::identity(n).unwrap()
    }

    #[test]
    fn single_column_unit_scaling() {
        let a = vec![real_vector(&[3.0, 4.0])];
        for f in [
            mgs_factorize(&a, &id(2), &QrOptions::default()).unwrap(),
            gs_factorize(&a, &id(2), &QrOptions::default()).unwrap(),
        ] {
            assert_eq!(f.r()[(0, 0)], C64::new(5.0, 0.0));
            assert_relative_eq!((f.q_col(0) - real_vector(&[0.6, 0.8])).norm(), 0.0, epsilon = 1e-16);
        }
    }

    #[test]
    fn diagonal_weight_column() {
        let w = WeightOperator::diagonal(vec![4.0, 9.0]).unwrap();
        let f = mgs_factorize(&[real_vector(&[1.0, 0.0])], &w, &QrOptions::default()).unwrap();
        assert_eq!(f.pivot(0), 2.0);
        assert_eq!(f.q_col(0), &real_vector(&[0.5, 0.0]));
    }

    #[test]
    fn two_columns_hand_computed() {
        let a = vec![real_vector(&[1.0, 1.0, 0.0]), real_vector(&[1.0, 0.0, 0.0])];
        let s = 0.5f64.sqrt();
        for f in [
            mgs_factorize(&a, &id(3), &QrOptions::default()).unwrap(),
            gs_factorize(&a, &id(3), &QrOptions::default()).unwrap(),
        ] {
            let r = f.r();
            assert_relative_eq!(r[(0, 0)].re, 2f64.sqrt(), epsilon = 1e-15);
            assert_relative_eq!(r[(0, 1)].re, s, epsilon = 1e-15);
            assert_eq!(r[(1, 0)], C64::new(0.0, 0.0));
            assert_relative_eq!(r[(1, 1)].re, s, epsilon = 1e-15);
            assert_relative_eq!((f.q_col(1) - real_vector(&[s, -s, 0.0])).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn append_forces_orthogonal_complement() {
        let w = id(3);
        let opts = QrOptions::default();
        let f = WqrFactors::empty(3).append_column(&real_vector(&[1.0, 0.0, 0.0]), &w, &opts).unwrap();
        let g = f.append_column(&real_vector(&[1.0, 1.0, 0.0]), &w, &opts).unwrap();
        assert_eq!(g.q_col(1), &real_vector(&[0.0, 1.0, 0.0]));
        assert_eq!(g.rho(1)[0], C64::new(1.0, 0.0));
        assert_eq!(g.pivot(1), 1.0);
        // leading block untouched
        assert_eq!(g.q_col(0), f.q_col(0));
        assert_eq!(g.r()[(0, 0)], f.r()[(0, 0)]);
    }

    #[test]
    fn collinear_append_is_rank_deficient() {
        let w = id(3);
        let opts = QrOptions::default();
        let f = WqrFactors::empty(3).append_column(&real_vector(&[1.0, 0.0, 0.0]), &w, &opts).unwrap();
        assert!(matches!(
            f.append_column(&real_vector(&[2.0, 0.0, 0.0]), &w, &opts),
            Err(Error::RankDeficient { column: 1 })
        ));
    }

    #[test]
    fn zero_column_and_overfull_are_rank_deficient() {
        let w = id(2);
        let opts = QrOptions::default();
        assert!(matches!(
            WqrFactors::empty(2).append_column(&CVector::zeros(2), &w, &opts),
            Err(Error::RankDeficient { column: 0 })
        ));
        let a = vec![real_vector(&[1.0, 0.0]), real_vector(&[0.0, 1.0]), real_vector(&[1.0, 1.0])];
        assert!(matches!(mgs_factorize(&a, &w, &opts), Err(Error::RankDeficient { column: 2 })));
    }

    #[test]
    fn reorthogonalization_keeps_factors() {
        let a = vec![
            real_vector(&[1.0, 2.0, 3.0, 4.0]),
            real_vector(&[1.0, 2.0, 3.0, 4.000001]),
            real_vector(&[0.0, 1.0, 0.0, 1.0]),
        ];
        let w = WeightOperator::diagonal(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let once = mgs_factorize(&a, &w, &QrOptions::default()).unwrap();
        let twice = mgs_factorize(&a, &w, &QrOptions { reorthogonalize: true, ..Default::default() }).unwrap();
        assert!(twice.orthogonality_deviation() <= once.orthogonality_deviation().max(1e-15));
        assert!(twice.reconstruction_error(&a) < 1e-12);
    }

    #[test]
    fn difference_matrix_records_k0() {
        let xs: Vec<CVector> = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 1.0, 0.0], [4.0, 2.0, 0.0]]
            .iter()
            .map(|x| real_vector(x))
            .collect();
        let mut u = DifferenceMatrix::from_sequence(&xs).unwrap();
        assert_eq!(u.len(), 3);
        let f = u.factorize(&id(3), 5, &QrOptions::default()).unwrap();
        assert_eq!(f.ncols(), 2);
        assert_eq!(u.detected_k0(), Some(2));
    }
}
