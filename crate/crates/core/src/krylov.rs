//! Weighted FOM and GMR for `(I - T) x = d`.
//!
//! An Arnoldi process orthonormalizes the Krylov vectors of `A = I - T`
//! under the weighted inner product with modified Gram-Schmidt, giving
//! `A V_k = V_{k+1} Hbar_k`. Because `V_{k+1}` is orthonormal in the weight,
//! both solvers reduce to small unweighted problems in `Hbar_k`:
//!
//! * FOM (Galerkin): `H_k y = beta e_1` with `H_k` the square top of `Hbar_k`;
//! * GMR (minimal residual): `min |beta e_1 - Hbar_k y|_2`.
//!
//! `A` is only ever applied to vectors.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::extrap::{run, Methods, RunHistory};
use crate::operator::LinearMap;
use crate::relations::Check;
use crate::tri::solve_upper;
use crate::wqr::{mgs_factorize, QrOptions, WqrFactors, DEFAULT_RANK_TOL};
use crate::wspace::{CMatrix, CVector, WeightOperator, C64};
use crate::Tolerances;

/// FOM is declared undefined when `e_{k+1}` lies within this distance of
/// the range of `Hbar_k`, i.e. when `H_k` is numerically singular.
pub const DEFAULT_FOM_TOL: f64 = 1e-12;

/// Snapshot of the Arnoldi process after `k` steps.
#[derive(Debug, Clone)]
pub struct KrylovState {
    /// `v_1..v_{k+1}`, or `v_1..v_k` once the space is exhausted.
    pub basis: Vec<CVector>,
    /// `(k+1) x k` upper Hessenberg `Hbar_k`.
    pub hessenberg: CMatrix,
    /// `r_0 = d - (I - T) x_0`.
    pub r0: CVector,
    pub x0: CVector,
    /// `|||r_0|||`.
    pub beta: f64,
    /// The last step produced no new direction: the Krylov space is
    /// invariant and stage `k` solves the system.
    pub exhausted: bool,
}

impl KrylovState {
    pub fn start(t: &LinearMap, d: &CVector, x0: &CVector, w: &WeightOperator) -> Result<Self> {
        check_dim(t.nrows(), t.ncols())?;
        check_dim(t.nrows(), d.len())?;
        check_dim(t.nrows(), x0.len())?;
        check_dim(t.nrows(), w.dim())?;
        let r0 = d - t.apply_shifted(x0)?;
        let beta = w.norm(&r0)?;
        let basis = if beta > 0.0 { vec![&r0 / C64::new(beta, 0.0)] } else { Vec::new() };
        Ok(KrylovState { basis, hessenberg: CMatrix::zeros(1, 0), r0, x0: x0.clone(), beta, exhausted: beta == 0.0 })
    }

    /// Number of Arnoldi steps taken, the dimension of the Krylov space.
    pub fn k(&self) -> usize {
        self.hessenberg.ncols()
    }

    /// `max |<v_i, v_j> - delta_ij|`.
    pub fn orthonormality_deviation(&self, w: &WeightOperator) -> f64 {
        let mut worst = 0.0f64;
        for (i, vi) in self.basis.iter().enumerate() {
            for (j, vj) in self.basis.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((w.inner_unchecked(vi, vj) - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Run up to `k` steps, stopping early when the space is exhausted.
    pub fn build(t: &LinearMap, d: &CVector, x0: &CVector, w: &WeightOperator, k: usize) -> Result<Self> {
        let mut state = KrylovState::start(t, d, x0, w)?;
        while state.k() < k && !state.exhausted {
            state = match arnoldi_step(&state, t, w) {
                Ok(next) => next,
                Err(Error::Breakdown { state, .. }) => *state,
                Err(e) => return Err(e),
            };
        }
        Ok(state)
    }
}

/// One Arnoldi step, modified Gram-Schmidt with a second pass. On a happy breakdown returns `Breakdown` carrying
/// the exhausted state, whose `Hbar_k` has a zero last row.
pub fn arnoldi_step(state: &KrylovState, t: &LinearMap, w: &WeightOperator) -> Result<KrylovState> {
    let k = state.k();
    if state.exhausted {
        return Err(Error::Breakdown { k, state: Box::new(state.clone()) });
    }
    let n = state.r0.len();
    if k >= n {
        return Err(Error::InvalidStage { k, reason: "Krylov space already spans C^N" });
    }
    let mut v = t.apply_shifted(&state.basis[k])?;
    let incoming = w.norm_unchecked(&v);
    let mut h = CVector::zeros(k + 2);
    // MGS, twice
    for _ in 0..2 {
        for (i, vi) in state.basis.iter().enumerate() {
            let hik = w.inner_unchecked(vi, &v);
            v.axpy(-hik, vi, C64::new(1.0, 0.0));
            h[i] += hik;
        }
    }
    let norm = w.norm_unchecked(&v);
    let mut hessenberg = state.hessenberg.clone().resize(k + 2, k + 1, C64::new(0.0, 0.0));
    let mut next = state.clone();
    if norm <= DEFAULT_RANK_TOL * incoming {
        hessenberg.set_column(k, &h);
        next.hessenberg = hessenberg;
        next.exhausted = true;
        return Err(Error::Breakdown { k: k + 1, state: Box::new(next) });
    }
    h[k + 1] = C64::new(norm, 0.0);
    hessenberg.set_column(k, &h);
    next.hessenberg = hessenberg;
    next.basis.push(v / C64::new(norm, 0.0));
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub enum FomOutcome {
    Solution(CVector),
    /// `H_k` is singular; `distance` is that of `e_{k+1}` from the range
    /// of `Hbar_k`.
    NotDefined { distance: f64 },
}

impl FomOutcome {
    pub fn solution(&self) -> Option<&CVector> {
        match self {
            FomOutcome::Solution(x) => Some(x),
            FomOutcome::NotDefined { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmrSolution {
    pub x: CVector,
    /// `|||d - (I - T) x|||` as given by the small least-squares problem.
    pub residual_norm: f64,
}

fn columns(m: &CMatrix) -> Vec<CVector> {
    m.column_iter().map(|c| c.into_owned()).collect()
}

fn unweighted_qr(m: &CMatrix) -> Result<WqrFactors> {
    let w = WeightOperator::identity(m.nrows())?;
    mgs_factorize(&columns(m), &w, &QrOptions { rank_tol: 0.0, reorthogonalize: true })
}

fn check_stage(state: &KrylovState, k: usize) -> Result<()> {
    if k > state.k() {
        return Err(Error::InvalidStage { k, reason: "beyond the Krylov dimension" });
    }
    Ok(())
}

fn beta_e1(state: &KrylovState, len: usize) -> CVector {
    let mut b = CVector::zeros(len);
    b[0] = C64::new(state.beta, 0.0);
    b
}

/// `x_0 + V_k y`.
fn lift(state: &KrylovState, y: &CVector) -> CVector {
    let mut x = state.x0.clone();
    for (yi, vi) in y.iter().zip(&state.basis) {
        x.axpy(*yi, vi, C64::new(1.0, 0.0));
    }
    x
}

/// FOM iterate `w_k` from a built state.
pub fn fom_from_state(state: &KrylovState, k: usize, fom_tol: f64) -> Result<FomOutcome> {
    check_stage(state, k)?;
    if k == 0 {
        return Ok(FomOutcome::Solution(state.x0.clone()));
    }
    let hbar = state.hessenberg.view((0, 0), (k + 1, k)).into_owned();
    let qr = unweighted_qr(&hbar)?;
    let mut e = CVector::zeros(k + 1);
    e[k] = C64::new(1.0, 0.0);
    let q = qr.q_matrix();
    let distance = (&e - &q * (q.adjoint() * &e)).norm();
    if distance <= fom_tol {
        return Ok(FomOutcome::NotDefined { distance });
    }
    let h = hbar.view((0, 0), (k, k)).into_owned();
    let sq = match unweighted_qr(&h) {
        Ok(f) => f,
        Err(Error::RankDeficient { .. }) => return Ok(FomOutcome::NotDefined { distance }),
        Err(e) => return Err(e),
    };
    let y = solve_upper(sq.r(), &(sq.q_matrix().adjoint() * beta_e1(state, k)));
    Ok(FomOutcome::Solution(lift(state, &y)))
}

/// GMR iterate `w_k` from a built state.
pub fn gmr_from_state(state: &KrylovState, k: usize) -> Result<GmrSolution> {
    check_stage(state, k)?;
    if k == 0 {
        return Ok(GmrSolution { x: state.x0.clone(), residual_norm: state.beta });
    }
    let hbar = state.hessenberg.view((0, 0), (k + 1, k)).into_owned();
    let qr = unweighted_qr(&hbar)?;
    let b = beta_e1(state, k + 1);
    let y = solve_upper(qr.r(), &(qr.q_matrix().adjoint() * &b));
    let residual_norm = (&b - &hbar * &y).norm();
    Ok(GmrSolution { x: lift(state, &y), residual_norm })
}

/// Galerkin iterate after `k` steps (or fewer if the space is exhausted).
pub fn fom_solve(t: &LinearMap, d: &CVector, x0: &CVector, w: &WeightOperator, k: usize) -> Result<FomOutcome> {
    let state = KrylovState::build(t, d, x0, w, k)?;
    fom_from_state(&state, k.min(state.k()), DEFAULT_FOM_TOL)
}

/// Minimal-residual iterate after `k` steps (or fewer if exhausted).
pub fn gmr_solve(t: &LinearMap, d: &CVector, x0: &CVector, w: &WeightOperator, k: usize) -> Result<GmrSolution> {
    let state = KrylovState::build(t, d, x0, w, k)?;
    gmr_from_state(&state, k.min(state.k()))
}

/// Krylov solvers against extrapolation of `x_{m+1} = T x_m + d` at one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceEntry {
    pub k: usize,
    pub mpe_exists: bool,
    pub fom_defined: bool,
    /// `|||w_k^FOM - s_k^MPE|||`.
    pub fom_vs_mpe: Check,
    /// `|||w_k^GMR - s_k^RRE|||`.
    pub gmr_vs_rre: Check,
    /// `U_k gamma_k` against the true residual of `s_k^MPE`, relative.
    pub mpe_residual: Check,
    pub rre_residual: Check,
    /// GMR residual norm against `sqrt(lambda)`, relative.
    pub gmr_residual_vs_estimate: Check,
    /// True-residual forms of the two corollaries.
    pub mpe_from_rre_ratio: Check,
    pub rre_from_mpe_sum: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub entries: Vec<EquivalenceEntry>,
    /// Dimension at which the Krylov space became invariant, if it did.
    pub exhausted_at: Option<usize>,
    /// `k0` detected by the extrapolation run, if any.
    pub k0: Option<usize>,
}

impl EquivalenceReport {
    /// Largest `|||w_k - s_k|||` over both methods and all `k`.
    pub fn max_solution_defect(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| [e.fom_vs_mpe.value(), e.gmr_vs_rre.value()])
            .flatten()
            .fold(0.0, f64::max)
    }

    /// FOM is undefined exactly where MPE does not exist.
    pub fn existence_consistent(&self) -> bool {
        self.entries.iter().all(|e| e.fom_defined == e.mpe_exists)
    }

    /// Largest of the residual defects (relative).
    pub fn max_residual_defect(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| {
                [e.mpe_residual, e.rre_residual, e.gmr_residual_vs_estimate, e.mpe_from_rre_ratio, e.rre_from_mpe_sum]
                    .map(|c| c.value())
            })
            .flatten()
            .fold(0.0, f64::max)
    }
}

fn rel(diff: f64, scale: f64) -> Check {
    Check::Defect(diff / scale.max(f64::MIN_POSITIVE))
}

/// Run FOM/GMR and MPE/RRE side by side for `k = 0..=k_max`.
pub fn equivalence_check(
    t: &LinearMap,
    d: &CVector,
    x0: &CVector,
    w: &WeightOperator,
    k_max: usize,
    tol: &Tolerances,
) -> Result<EquivalenceReport> {
    let mut xs = vec![x0.clone()];
    for m in 0..=k_max {
        let next = t.apply(&xs[m])? + d;
        xs.push(next);
    }
    let history = run(&xs, w, k_max, Methods::BOTH, tol)?;
    let state = KrylovState::build(t, d, x0, w, k_max)?;
    let true_residual = |s: &CVector| -> Result<f64> { w.norm(&(d - t.apply_shifted(s)?)) };

    let mut entries = Vec::with_capacity(history.records.len());
    let mut sum_inv_mpe = 0.0f64;
    let mut prev_rre_res: Option<f64> = None;
    for rec in &history.records {
        let k = rec.k;
        let kk = k.min(state.k());
        let fom = fom_from_state(&state, kk, DEFAULT_FOM_TOL)?;
        let gmr = gmr_from_state(&state, kk)?;
        let fom_vs_mpe = match (fom.solution(), &rec.s_mpe) {
            (Some(x), Some(s)) => Check::Defect(w.norm(&(x - s))?),
            _ => Check::NotApplicable,
        };
        let gmr_vs_rre = Check::Defect(w.norm(&(&gmr.x - &rec.s_rre))?);

        let skip = rec.terminal;
        let res_rre = true_residual(&rec.s_rre)?;
        let rre_residual = if skip { Check::NotApplicable } else { residual_identity(&history, &rec.gamma_rre, &rec.s_rre, t, d, w)? };
        let gmr_residual_vs_estimate =
            if skip { Check::NotApplicable } else { rel((gmr.residual_norm - rec.phi_rre).abs(), rec.phi_rre) };
        let (mpe_residual, res_mpe) = match (&rec.gamma_mpe, &rec.s_mpe) {
            (Some(g), Some(s)) if !skip => (residual_identity(&history, g, s, t, d, w)?, Some(true_residual(s)?)),
            _ => (Check::NotApplicable, None),
        };
        if let Some(r) = res_mpe {
            sum_inv_mpe += 1.0 / (r * r);
        }
        let rre_from_mpe_sum = if skip {
            Check::NotApplicable
        } else {
            let a = 1.0 / (res_rre * res_rre);
            rel((a - sum_inv_mpe).abs(), a.max(sum_inv_mpe))
        };
        let mpe_from_rre_ratio = match (res_mpe, prev_rre_res) {
            (Some(rm), Some(prev)) if k > 0 && res_rre < prev => {
                let ratio = res_rre / prev;
                let rhs = res_rre / (1.0 - ratio * ratio).sqrt();
                rel((rm - rhs).abs(), rm.max(rhs))
            }
            _ => Check::NotApplicable,
        };
        prev_rre_res = Some(res_rre);
        entries.push(EquivalenceEntry {
            k,
            mpe_exists: rec.mpe_exists,
            fom_defined: fom.solution().is_some(),
            fom_vs_mpe,
            gmr_vs_rre,
            mpe_residual,
            rre_residual,
            gmr_residual_vs_estimate,
            mpe_from_rre_ratio,
            rre_from_mpe_sum,
        });
    }
    Ok(EquivalenceReport {
        entries,
        exhausted_at: state.exhausted.then(|| state.k()),
        k0: history.status.k0(),
    })
}

/// `|||U_k gamma - r(s)||| / max(|||U_k gamma|||, |||r(s)|||)`.
fn residual_identity(
    history: &RunHistory,
    gamma: &CVector,
    s: &CVector,
    t: &LinearMap,
    d: &CVector,
    w: &WeightOperator,
) -> Result<Check> {
    let u = history.differences.as_ref().ok_or(Error::InvalidStage { k: gamma.len() - 1, reason: "no difference vectors" })?;
    let ug = u.apply(gamma);
    let r = d - t.apply_shifted(s)?;
    let (a, b) = (w.norm(&ug)?, w.norm(&r)?);
    Ok(rel(w.norm(&(ug - r))?, a.max(b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wspace::real_vector;

    fn demo() -> (LinearMap, CVector, CVector) {
        (
            LinearMap::Dense(CMatrix::from_diagonal(&real_vector(&[0.5, 0.25]))),
            real_vector(&[0.5, 0.75]),
            CVector::zeros(2),
        )
    }

    #[test]
    fn identity_operator_breaks_down_at_once() {
        // T = 0 gives A = I.
        let t = LinearMap::Dense(CMatrix::zeros(3, 3));
        let w = WeightOperator::identity(3).unwrap();
        let s = KrylovState::start(&t, &real_vector(&[1.0, 2.0, 3.0]), &CVector::zeros(3), &w).unwrap();
        match arnoldi_step(&s, &t, &w) {
            Err(Error::Breakdown { k: 1, state }) => {
                assert!(state.exhausted);
                assert_eq!(state.basis.len(), 1);
            }
            other => panic!("expected breakdown, got {other:?}"),
        }
    }

    #[test]
    fn two_eigencomponents_fill_the_space() {
        let t = LinearMap::Dense(CMatrix::from_diagonal(&real_vector(&[0.5, 0.25])));
        let w = WeightOperator::identity(2).unwrap();
        let s = KrylovState::build(&t, &real_vector(&[1.0, 1.0]), &CVector::zeros(2), &w, 5).unwrap();
        assert_eq!(s.k(), 2);
        assert!(s.orthonormality_deviation(&w) < 1e-14);
    }

    #[test]
    fn demo_matches_extrapolants() {
        let (t, d, x0) = demo();
        let w = WeightOperator::identity(2).unwrap();
        let fom = fom_solve(&t, &d, &x0, &w, 1).unwrap();
        let x = fom.solution().unwrap();
        assert!((x - real_vector(&[26.0 / 35.0, 39.0 / 35.0])).norm() < 1e-14);
        let g = gmr_solve(&t, &d, &x0, &w, 1).unwrap();
        assert!((&g.x - real_vector(&[70.0 / 97.0, 105.0 / 97.0])).norm() < 1e-14);
        assert!((g.residual_norm - 218.25f64.sqrt() / 97.0).abs() < 1e-14);
        for k in [2, 3] {
            let x = fom_solve(&t, &d, &x0, &w, k).unwrap();
            assert!((x.solution().unwrap() - real_vector(&[1.0, 1.0])).norm() < 1e-14);
            let g = gmr_solve(&t, &d, &x0, &w, k).unwrap();
            assert!((g.x - real_vector(&[1.0, 1.0])).norm() < 1e-14);
        }
    }

    #[test]
    fn demo_equivalence() {
        let (t, d, x0) = demo();
        let w = WeightOperator::identity(2).unwrap();
        let r = equivalence_check(&t, &d, &x0, &w, 2, &Tolerances::default()).unwrap();
        assert_eq!(r.entries.len(), 3);
        assert!(r.max_solution_defect() < 1e-10);
        assert!(r.existence_consistent());
        assert!(r.max_residual_defect() < 1e-10, "{r:?}");
        assert_eq!(r.k0, Some(2));
    }

    #[test]
    fn fom_not_defined_on_failure_problem() {
        let w = WeightOperator::identity(3).unwrap();
        let p = crate::harness::make_mpe_failure_problem(&w).unwrap();
        let crate::harness::ProblemKind::Linear { t, d } = &p.kind else { unreachable!() };
        let fom = fom_solve(t, d, &p.x0, &w, 1).unwrap();
        assert!(matches!(fom, FomOutcome::NotDefined { .. }));
        let r = equivalence_check(t, d, &p.x0, &w, 2, &Tolerances::default()).unwrap();
        assert!(!r.entries[1].mpe_exists);
        assert!(r.existence_consistent());
        assert!(r.max_solution_defect() < 1e-10);
    }

    #[test]
    fn zero_initial_residual() {
        let (t, _, _) = demo();
        let w = WeightOperator::identity(2).unwrap();
        let x = real_vector(&[1.0, 1.0]);
        let d = real_vector(&[0.5, 0.75]);
        let s = KrylovState::build(&t, &d, &x, &w, 3).unwrap();
        assert_eq!(s.k(), 0);
        assert!(s.exhausted);
        assert_eq!(gmr_from_state(&s, 0).unwrap().x, x);
    }
}
