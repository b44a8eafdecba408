//! Fixed-point problems, vector sequences and constructed fixtures.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_dim, Error, Result};
use crate::operator::LinearMap;
use crate::wspace::{CMatrix, CVector, WeightOperator, C64};

pub type VectorFn = Arc<dyn Fn(&CVector) -> CVector + Send + Sync>;

/// A named vector-to-vector map `f`.
#[derive(Clone)]
pub struct NonlinearMap {
    name: String,
    f: VectorFn,
}

impl NonlinearMap {
    pub fn new(name: impl Into<String>, f: VectorFn) -> Self {
        NonlinearMap { name: name.into(), f }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn apply(&self, x: &CVector) -> CVector {
        (self.f)(x)
    }

    /// `f(x)_i = cos(x_i)`.
    pub fn cosine() -> Self {
        NonlinearMap::new("cosine", Arc::new(|x: &CVector| x.map(|xi| xi.cos())))
    }

    /// `f(x)_i = 1/2 + 3/10 x_i + 1/10 x_{i+1} + 1/10 x_i^2`, indices cyclic.
    pub fn quadratic() -> Self {
        NonlinearMap::new(
            "quadratic",
            Arc::new(|x: &CVector| {
                let n = x.len();
                CVector::from_iterator(
                    n,
                    (0..n).map(|i| {
                        let xi = x[i];
                        C64::new(0.5, 0.0) + xi * 0.3 + x[(i + 1) % n] * 0.1 + xi * xi * 0.1
                    }),
                )
            }),
        )
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "cosine" => Some(Self::cosine()),
            "quadratic" => Some(Self::quadratic()),
            _ => None,
        }
    }
}

impl fmt::Debug for NonlinearMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearMap").field("name", &self.name).finish()
    }
}

#[derive(Debug, Clone)]
pub enum ProblemKind {
    /// `f(x) = T x + d`.
    Linear { t: LinearMap, d: CVector },
    Nonlinear(NonlinearMap),
}

/// `x = f(x)` together with a starting vector.
#[derive(Debug, Clone)]
pub struct FixedPointProblem {
    pub kind: ProblemKind,
    pub x0: CVector,
    /// `(I - T)^{-1} d` for linear problems, when known.
    pub known_solution: Option<CVector>,
}

impl FixedPointProblem {
    pub fn linear(t: LinearMap, d: CVector, x0: CVector) -> Result<Self> {
        check_dim(t.nrows(), t.ncols())?;
        check_dim(t.nrows(), d.len())?;
        check_dim(t.nrows(), x0.len())?;
        Ok(FixedPointProblem { kind: ProblemKind::Linear { t, d }, x0, known_solution: None })
    }

    pub fn nonlinear(map: NonlinearMap, x0: CVector) -> Self {
        FixedPointProblem { kind: ProblemKind::Nonlinear(map), x0, known_solution: None }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, ProblemKind::Linear { .. })
    }

    /// Solve `(I - T) x = d` densely and store the result.
    pub fn with_direct_solution(mut self) -> Result<Self> {
        self.known_solution = Some(self.direct_solution()?);
        Ok(self)
    }

    /// Dense LU solve of `(I - T) x = d`.
    pub fn direct_solution(&self) -> Result<CVector> {
        match &self.kind {
            ProblemKind::Linear { t, d } => {
                let n = t.nrows();
                let a = CMatrix::identity(n, n) - t.to_dense();
                a.lu().solve(d).ok_or(Error::SingularSystem)
            }
            ProblemKind::Nonlinear(_) => Err(Error::NotLinear),
        }
    }

    /// `f(x)`.
    pub fn apply(&self, x: &CVector) -> Result<CVector> {
        check_dim(self.dim(), x.len())?;
        match &self.kind {
            ProblemKind::Linear { t, d } => Ok(t.apply(x)? + d),
            ProblemKind::Nonlinear(map) => {
                let y = map.apply(x);
                check_dim(self.dim(), y.len())?;
                Ok(y)
            }
        }
    }
}

/// `x_0, ..., x_M` with a common dimension and `M >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSequence {
    vectors: Vec<CVector>,
}

impl VectorSequence {
    pub fn new(vectors: Vec<CVector>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::InsufficientVectors { needed: 2, got: vectors.len() });
        }
        let n = vectors[0].len();
        if n == 0 {
            return Err(Error::EmptyInput("sequence vectors"));
        }
        for v in &vectors {
            check_dim(n, v.len())?;
        }
        Ok(VectorSequence { vectors })
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[CVector] {
        &self.vectors
    }

    pub fn into_vectors(self) -> Vec<CVector> {
        self.vectors
    }
}

/// `x_0, x_1 = f(x_0), ..., x_m`. Divergent sequences are returned as long
/// as every entry stays finite.
pub fn iterate(p: &FixedPointProblem, m: usize) -> Result<VectorSequence> {
    if m == 0 {
        return Err(Error::InvalidArgument("iteration count must be at least 1".into()));
    }
    let mut xs = Vec::with_capacity(m + 1);
    xs.push(p.x0.clone());
    for index in 1..=m {
        let next = p.apply(&xs[index - 1])?;
        if !next.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFiniteIterate { index });
        }
        xs.push(next);
    }
    VectorSequence::new(xs)
}

/// `r(x) = f(x) - x`.
pub fn residual(p: &FixedPointProblem, x: &CVector) -> Result<CVector> {
    Ok(p.apply(x)? - x)
}

fn unit(n: usize, i: usize) -> CVector {
    let mut e = CVector::zeros(n);
    e[i] = C64::new(1.0, 0.0);
    e
}

/// `e_1` made `W`-orthogonal to `e_0`.
fn orthogonal_second_direction(w: &WeightOperator) -> CVector {
    let n = w.dim();
    let (e0, e1) = (unit(n, 0), unit(n, 1));
    let t = w.inner_unchecked(&e0, &e1) / w.inner_unchecked(&e0, &e0);
    e1 - e0 * t
}

/// `x_0 = 0, x_1 = u_0, x_2 = u_0 + u_1` with `<u_0, u_1> = |||u_0|||^2`
/// under the identity weight, which forces `alpha = 0` at `k = 1`.
pub fn make_mpe_failure_sequence(n: usize) -> Result<VectorSequence> {
    make_mpe_failure_sequence_weighted(&WeightOperator::identity(n)?)
}

/// As [`make_mpe_failure_sequence`], with the orthogonality taken in `w`.
pub fn make_mpe_failure_sequence_weighted(w: &WeightOperator) -> Result<VectorSequence> {
    let n = w.dim();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("failure fixture needs N >= 3, got {n}")));
    }
    let u0 = unit(n, 0);
    let u1 = &u0 + orthogonal_second_direction(w);
    let x0 = CVector::zeros(n);
    let x1 = &x0 + &u0;
    let x2 = &x1 + &u1;
    VectorSequence::new(vec![x0, x1, x2])
}

/// A nonsingular linear problem whose iterates from `x_0 = 0` start with the
/// failure fixture: `u_0 = e_0` and `u_1 = T u_0 = e_0 + v`, `v` orthogonal
/// to `e_0` in `w`.
pub fn make_mpe_failure_problem(w: &WeightOperator) -> Result<FixedPointProblem> {
    let n = w.dim();
    if n < 3 {
        return Err(Error::InvalidArgument(format!("failure fixture needs N >= 3, got {n}")));
    }
    let v = orthogonal_second_direction(w);
    let mut t = CMatrix::zeros(n, n);
    for i in 0..n {
        t[(i, 0)] = v[i];
    }
    t[(0, 0)] += C64::new(1.0, 0.0);
    // (I - T) restricted to span{e_0, e_1} has determinant -v_0/2 - t_01 = -1/2.
    t[(0, 1)] = C64::new(0.5, 0.0) - v[0] * 0.5;
    for i in 1..n {
        t[(i, i)] = C64::new(0.5, 0.0);
    }
    let p = FixedPointProblem::linear(LinearMap::Dense(t), unit(n, 0), CVector::zeros(n))?;
    p.with_direct_solution()
}

/// Lower bidiagonal `T` with `T_00 = 1 - eps`, so `alpha = eps` at `k = 1`:
/// MPE residuals peak while RRE residuals plateau. `n >= 3`.
pub fn make_peak_plateau_problem(n: usize, eps: f64) -> Result<FixedPointProblem> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("peak-plateau fixture needs N >= 3, got {n}")));
    }
    let mut t = CMatrix::zeros(n, n);
    t[(0, 0)] = C64::new(1.0 - eps, 0.0);
    for i in 1..n {
        t[(i, i - 1)] = C64::new(1.0, 0.0);
        t[(i, i)] = C64::new(0.3 + 0.4 * (i as f64) / (n as f64), 0.0);
    }
    let p = FixedPointProblem::linear(LinearMap::Dense(t), unit(n, 0), CVector::zeros(n))?;
    p.with_direct_solution()
}

/// Seeded random fixtures for tests and demos.
pub mod random {
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::operator::SparseMatrix;

    pub fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn scalar<R: Rng>(rng: &mut R, complex: bool) -> C64 {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if complex { rng.sample(StandardNormal) } else { 0.0 };
        C64::new(re, im)
    }

    pub fn vector<R: Rng>(rng: &mut R, n: usize, complex: bool) -> CVector {
        DVector::from_iterator(n, (0..n).map(|_| scalar(rng, complex)))
    }

    pub fn matrix<R: Rng>(rng: &mut R, n: usize, m: usize, complex: bool) -> CMatrix {
        CMatrix::from_fn(n, m, |_, _| scalar(rng, complex))
    }

    /// `I + G* G / n`, hermitian positive definite with condition number
    /// at most about 5.
    pub fn pd_weight<R: Rng>(rng: &mut R, n: usize, complex: bool) -> WeightOperator {
        let g = matrix(rng, n, n, complex);
        let m = CMatrix::identity(n, n) + g.adjoint() * &g / C64::new(n as f64, 0.0);
        let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        WeightOperator::dense(m).expect("I + G*G is hermitian positive definite")
    }

    /// Positive diagonal weights in `[0.5, 2)`.
    pub fn diag_weight<R: Rng>(rng: &mut R, n: usize) -> WeightOperator {
        WeightOperator::diagonal((0..n).map(|_| rng.random_range(0.5..2.0)).collect())
            .expect("weights are positive")
    }

    /// `count` independent Gaussian vectors.
    pub fn sequence<R: Rng>(rng: &mut R, n: usize, count: usize, complex: bool) -> Vec<CVector> {
        (0..count).map(|_| vector(rng, n, complex)).collect()
    }

    /// `T = S D S^{-1}` with distinct eigenvalues in `(-radius, radius)` and
    /// a well-conditioned `S`; `d`, `x_0` Gaussian.
    pub fn linear_system<R: Rng>(rng: &mut R, n: usize, radius: f64, complex: bool) -> FixedPointProblem {
        let eig: Vec<C64> = (0..n)
            .map(|i| {
                // evenly spaced, jittered within their slots, so all distinct
                let slot = 2.0 * radius / n as f64;
                let re = -radius + slot * (i as f64 + rng.random_range(0.1..0.9));
                C64::new(re, 0.0)
            })
            .collect();
        let s = CMatrix::identity(n, n) + matrix(rng, n, n, complex) * C64::new(0.3 / (n as f64).sqrt(), 0.0);
        let s_inv = s.clone().try_inverse().expect("I + small perturbation is invertible");
        let d_mat = CMatrix::from_diagonal(&DVector::from_vec(eig));
        let t = &s * d_mat * s_inv;
        let d = vector(rng, n, complex);
        let x0 = vector(rng, n, complex);
        FixedPointProblem::linear(LinearMap::Dense(t), d, x0)
            .and_then(|p| p.with_direct_solution())
            .expect("spectral radius below one keeps I - T nonsingular")
    }

    /// Sparse `T` with about `density * n^2` entries, scaled to infinity
    /// norm `radius` (< 1), so the iteration converges.
    pub fn sparse_linear_system<R: Rng>(rng: &mut R, n: usize, density: f64, radius: f64) -> FixedPointProblem {
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j || rng.random_bool(density) {
                    trip.push((i, j, scalar(rng, false)));
                }
            }
        }
        let mut row_abs = vec![0.0f64; n];
        for &(i, _, v) in &trip {
            row_abs[i] += v.norm();
        }
        let scale = radius / row_abs.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
        for t in &mut trip {
            t.2 *= scale;
        }
        let t = LinearMap::Sparse(SparseMatrix::from_triplets(n, n, &trip));
        let d = vector(rng, n, false);
        FixedPointProblem::linear(t, d, CVector::zeros(n))
            .and_then(|p| p.with_direct_solution())
            .expect("infinity norm below one keeps I - T nonsingular")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wspace::real_vector;

    fn demo() -> FixedPointProblem {
        let t = CMatrix::from_diagonal(&real_vector(&[0.5, 0.25]));
        FixedPointProblem::linear(LinearMap::Dense(t), real_vector(&[0.5, 0.75]), CVector::zeros(2))
            .unwrap()
            .with_direct_solution()
            .unwrap()
    }

    #[test]
    fn linear_demo_iterates_are_exact_dyadics() {
        let xs = iterate(&demo(), 3).unwrap();
        assert_eq!(xs.len(), 4);
        assert_eq!(xs.vectors()[1], real_vector(&[0.5, 0.75]));
        assert_eq!(xs.vectors()[2], real_vector(&[0.75, 0.9375]));
        assert_eq!(xs.vectors()[3], real_vector(&[0.875, 0.984375]));
    }

    #[test]
    fn residual_examples() {
        let p = demo();
        let s = p.known_solution.clone().unwrap();
        assert!((s.clone() - real_vector(&[1.0, 1.0])).norm() < 1e-15);
        assert!(residual(&p, &s).unwrap().norm() < 1e-15);
        let xs = iterate(&p, 1).unwrap();
        let u0 = &xs.vectors()[1] - &xs.vectors()[0];
        assert_eq!(residual(&p, &p.x0).unwrap(), u0);
        assert!(matches!(residual(&p, &real_vector(&[1.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn identity_map_is_constant() {
        let p = FixedPointProblem::nonlinear(
            NonlinearMap::new("identity", Arc::new(|x: &CVector| x.clone())),
            real_vector(&[1.0, 2.0]),
        );
        let xs = iterate(&p, 3).unwrap();
        assert!(xs.vectors().iter().all(|x| *x == p.x0));
    }

    #[test]
    fn divergent_but_finite() {
        let t = CMatrix::from_diagonal(&real_vector(&[2.0, -2.0]));
        let p = FixedPointProblem::linear(LinearMap::Dense(t), real_vector(&[1.0, 1.0]), CVector::zeros(2)).unwrap();
        let xs = iterate(&p, 10).unwrap();
        assert!(xs.vectors()[10].norm() > 1000.0);
        let t = CMatrix::from_diagonal(&real_vector(&[1e200, 1.0]));
        let p = FixedPointProblem::linear(LinearMap::Dense(t), real_vector(&[1.0, 1.0]), CVector::zeros(2)).unwrap();
        assert!(matches!(iterate(&p, 5), Err(Error::NonFiniteIterate { index: 3 })));
    }

    #[test]
    fn zero_iterations_rejected() {
        assert!(iterate(&demo(), 0).is_err());
    }

    #[test]
    fn failure_sequence_shape() {
        let xs = make_mpe_failure_sequence(3).unwrap();
        let v = xs.vectors();
        assert_eq!(v[0], real_vector(&[0.0, 0.0, 0.0]));
        assert_eq!(v[1], real_vector(&[1.0, 0.0, 0.0]));
        assert_eq!(v[2], real_vector(&[2.0, 1.0, 0.0]));
        assert!(make_mpe_failure_sequence(2).is_err());
    }

    #[test]
    fn failure_problem_reproduces_sequence() {
        let w = WeightOperator::identity(4).unwrap();
        let p = make_mpe_failure_problem(&w).unwrap();
        let xs = iterate(&p, 2).unwrap();
        let fixture = make_mpe_failure_sequence(4).unwrap();
        assert_eq!(xs.vectors()[..3], fixture.vectors()[..3]);
        assert!(p.known_solution.is_some());
    }

    #[test]
    fn diagonal_contraction_rate() {
        let p = demo();
        let s = p.known_solution.clone().unwrap();
        let xs = iterate(&p, 8).unwrap();
        for pair in xs.vectors().windows(2) {
            let e0 = (&pair[0] - &s).norm();
            let e1 = (&pair[1] - &s).norm();
            assert!(e1 <= 0.5 * e0 + 1e-15);
        }
    }
}
