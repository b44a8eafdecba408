//! Weighted inner product spaces over `C^N`.
//!
//! A [`WeightOperator`] wraps a hermitian positive definite matrix `M` and
//! provides `<y, z> = y* M z` together with the induced norm
//! `|||z||| = sqrt(z* M z)`. Three representations are supported: the
//! identity, a positive diagonal, and a dense hermitian matrix. All of them
//! are validated once (a Cholesky factorization is the positivity test) and
//! are immutable afterwards.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};

pub type C64 = Complex64;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

/// Absolute tolerance on `max |M_ij - conj(M_ji)|` for dense weights.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Relative tolerance on the imaginary part and negativity of `z* M z`.
const QUADRATIC_FORM_TOL: f64 = 1e-12;

/// Raw, unvalidated weight specification.
#[derive(Debug, Clone)]
pub enum WeightInput {
    Identity(usize),
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Representation {
    Identity,
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

#[derive(Debug, Clone)]
enum Factor {
    Identity,
    /// Square roots of the diagonal weights.
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

/// A validated hermitian positive definite weight `M`.
#[derive(Debug, Clone)]
pub struct WeightOperator {
    repr: Representation,
    dim: usize,
    factor: Factor,
}

impl WeightOperator {
    pub fn identity(dim: usize) -> Result<Self> {
        validate(WeightInput::Identity(dim))
    }

    pub fn diagonal(weights: Vec<f64>) -> Result<Self> {
        validate(WeightInput::Diagonal(weights))
    }

    pub fn dense(m: CMatrix) -> Result<Self> {
        validate(WeightInput::Dense(m))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn representation(&self) -> &Representation {
        &self.repr
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.repr, Representation::Identity)
    }

    /// Lower-triangular `L` with `M = L L*`.
    pub fn cholesky_factor(&self) -> CMatrix {
        match &self.factor {
            Factor::Identity => CMatrix::identity(self.dim, self.dim),
            Factor::Diagonal(s) => {
                CMatrix::from_diagonal(&CVector::from_iterator(s.len(), s.iter().map(|&x| C64::new(x, 0.0))))
            }
            Factor::Dense(l) => l.clone(),
        }
    }

    /// The weight as a dense matrix.
    pub fn to_dense(&self) -> CMatrix {
        match &self.repr {
            Representation::Identity => CMatrix::identity(self.dim, self.dim),
            Representation::Diagonal(w) => {
                CMatrix::from_diagonal(&CVector::from_iterator(w.len(), w.iter().map(|&x| C64::new(x, 0.0))))
            }
            Representation::Dense(m) => m.clone(),
        }
    }

    /// `M z`.
    pub fn apply(&self, z: &CVector) -> Result<CVector> {
        check_dim(self.dim, z.len())?;
        Ok(self.apply_unchecked(z))
    }

    pub(crate) fn apply_unchecked(&self, z: &CVector) -> CVector {
        match &self.repr {
            Representation::Identity => z.clone(),
            Representation::Diagonal(w) => {
                CVector::from_iterator(z.len(), z.iter().zip(w).map(|(zi, &wi)| zi * wi))
            }
            Representation::Dense(m) => m * z,
        }
    }

    /// `<y, z> = y* M z`, conjugate-linear in `y`.
    pub fn inner(&self, y: &CVector, z: &CVector) -> Result<C64> {
        check_dim(self.dim, y.len())?;
        check_dim(self.dim, z.len())?;
        Ok(self.inner_unchecked(y, z))
    }

    pub(crate) fn inner_unchecked(&self, y: &CVector, z: &CVector) -> C64 {
        match &self.repr {
            Representation::Identity => y.dotc(z),
            Representation::Diagonal(w) => y
                .iter()
                .zip(z.iter())
                .zip(w)
                .map(|((yi, zi), &wi)| yi.conj() * zi * wi)
                .sum(),
            Representation::Dense(m) => y.dotc(&(m * z)),
        }
    }

    /// `|||z||| = sqrt(z* M z)`.
    pub fn norm(&self, z: &CVector) -> Result<f64> {
        check_dim(self.dim, z.len())?;
        self.norm_checked(z)
    }

    fn norm_checked(&self, z: &CVector) -> Result<f64> {
        let q = match &self.repr {
            Representation::Identity => return Ok(z.norm()),
            Representation::Diagonal(w) => {
                let s: f64 = z.iter().zip(w).map(|(zi, &wi)| wi * zi.norm_sqr()).sum();
                return Ok(s.sqrt());
            }
            Representation::Dense(m) => {
                let mz = m * z;
                let scale: f64 = z.iter().zip(mz.iter()).map(|(a, b)| a.norm() * b.norm()).sum();
                (z.dotc(&mz), scale)
            }
        };
        let (value, scale) = q;
        if value.im.abs() > QUADRATIC_FORM_TOL * (1.0 + value.re.abs()) {
            return Err(Error::NonRealQuadraticForm { imag: value.im });
        }
        if value.re < -QUADRATIC_FORM_TOL * scale {
            return Err(Error::NegativeQuadraticForm { value: value.re });
        }
        Ok(value.re.max(0.0).sqrt())
    }

    /// Infallible norm for vectors already known to have the right length.
    pub(crate) fn norm_unchecked(&self, z: &CVector) -> f64 {
        match self.norm_checked(z) {
            Ok(v) => v,
            Err(_) => {
                // A validated operator cannot produce this; fall back to the
                // factored form, which is always real and nonnegative.
                let l = self.cholesky_factor();
                (l.adjoint() * z).norm()
            }
        }
    }
}

/// Validate a raw weight and cache its Cholesky factor.
pub fn validate(input: WeightInput) -> Result<WeightOperator> {
    match input {
        WeightInput::Identity(n) => {
            if n == 0 {
                return Err(Error::EmptyInput("weight dimension"));
            }
            Ok(WeightOperator { repr: Representation::Identity, dim: n, factor: Factor::Identity })
        }
        WeightInput::Diagonal(w) => {
            if w.is_empty() {
                return Err(Error::EmptyInput("weight list"));
            }
            for (index, &value) in w.iter().enumerate() {
                // NaN fails this test too.
                if !(value > 0.0) || !value.is_finite() {
                    return Err(Error::NonpositiveWeight { index, value });
                }
            }
            let sqrt = w.iter().map(|x| x.sqrt()).collect();
            Ok(WeightOperator { dim: w.len(), repr: Representation::Diagonal(w), factor: Factor::Diagonal(sqrt) })
        }
        WeightInput::Dense(m) => {
            if m.nrows() == 0 {
                return Err(Error::EmptyInput("weight matrix"));
            }
            check_dim(m.nrows(), m.ncols())?;
            let n = m.nrows();
            let mut deviation = 0.0f64;
            for i in 0..n {
                for j in 0..=i {
                    deviation = deviation.max((m[(i, j)] - m[(j, i)].conj()).norm());
                }
            }
            if !(deviation <= HERMITIAN_TOL) {
                return Err(Error::NotHermitian { deviation });
            }
            let l = cholesky(&m)?;
            Ok(WeightOperator { dim: n, repr: Representation::Dense(m), factor: Factor::Dense(l) })
        }
    }
}

/// Cholesky `M = L L*` from the lower triangle. The complex factorization
/// takes complex square roots, so an indefinite `M` shows up as a diagonal
/// entry of `L` that is not real positive.
fn cholesky(m: &CMatrix) -> Result<CMatrix> {
    let l = m.clone().cholesky().map(|c| c.unpack());
    let definite = l.as_ref().is_some_and(|l| {
        l.diagonal().iter().all(|d| d.re > 0.0 && d.re.is_finite() && d.im.abs() <= HERMITIAN_TOL * d.re)
    });
    match l {
        Some(l) if definite => Ok(l),
        _ => {
            let min_eigenvalue = m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
            Err(Error::NotPositiveDefinite { min_eigenvalue })
        }
    }
}

/// Convenience: build a complex vector from real entries.
pub fn real_vector(values: &[f64]) -> CVector {
    CVector::from_iterator(values.len(), values.iter().map(|&x| C64::new(x, 0.0)))
}
