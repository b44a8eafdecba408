//! The unified MPE/RRE algorithm.
//!
//! Both methods share one weighted QR factorization `U_k = Q_k R_k` of the
//! difference matrix, grown one column per stage. For stage `k`:
//!
//! * MPE solves `R_{k-1} c' = -rho_k`, sets `c = [c'; 1]`, `alpha = sum c_i`
//!   and `gamma = c / alpha` (undefined when `alpha` vanishes).
//! * RRE solves `R_k* y = e`, `R_k h = y` and sets `lambda = 1 / sum h_i`,
//!   `gamma = lambda h`.
//!
//! The extrapolant is `s_k = x_0 + Q_{k-1} (R_{k-1} xi)` where
//! `xi_j = sum_{i > j} gamma_i`, and its residual estimate
//! `|||U_k gamma|||` is `r_kk |gamma_k|` for MPE and `sqrt(lambda)` for RRE.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::tri::{solve_upper, solve_upper_adjoint, upper_mul};
use crate::wqr::{DifferenceMatrix, Projection, WqrFactors};
use crate::wspace::{CMatrix, CVector, WeightOperator, C64};
use crate::Tolerances;

/// Default relative threshold of the MPE existence test.
pub const DEFAULT_EXIST_TOL: f64 = 1e-12;

/// Largest tolerated `|Im lambda| / Re lambda`.
const LAMBDA_IMAG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mpe,
    Rre,
}

/// Which extrapolants a run assembles. RRE coefficients and the MPE
/// existence flag are always computed; this only controls which `s_k`
/// vectors are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Methods {
    pub mpe: bool,
    pub rre: bool,
}

impl Methods {
    pub const BOTH: Methods = Methods { mpe: true, rre: true };
    pub const MPE: Methods = Methods { mpe: true, rre: false };
    pub const RRE: Methods = Methods { mpe: false, rre: true };
}

/// Coefficients of one method at one stage.
#[derive(Debug, Clone)]
pub struct CoefficientSolve {
    pub method: Method,
    pub k: usize,
    /// MPE: `c_0..c_{k-1}`.
    pub c_prime: Option<CVector>,
    /// MPE: `[c'; 1]`.
    pub c: Option<CVector>,
    /// MPE: `sum_i c_i`.
    pub alpha: Option<C64>,
    /// RRE: solution of `R_k* R_k h = e`.
    pub h: Option<CVector>,
    /// RRE: `1 / sum_i h_i`.
    pub lambda: Option<f64>,
    /// `None` exactly when MPE does not exist.
    pub gamma: Option<CVector>,
    pub exists: bool,
    /// `r_kk` used by the residual estimate.
    pub pivot: f64,
}

/// MPE coefficients from the last column of `f`.
pub fn mpe_coefficients(f: &WqrFactors, exist_tol: f64) -> Result<CoefficientSolve> {
    let k = f.k().ok_or(Error::InvalidStage { k: 0, reason: "no factored columns" })?;
    Ok(mpe_from_parts(k, f.r(), &f.rho(k), f.pivot(k), exist_tol))
}

/// `r` supplies the leading `k x k` block `R_{k-1}`.
pub(crate) fn mpe_from_parts(k: usize, r: &CMatrix, rho: &CVector, pivot: f64, exist_tol: f64) -> CoefficientSolve {
    let c_prime = solve_upper(r, &(-rho));
    let c = c_prime.clone().resize_vertically(k + 1, C64::new(1.0, 0.0));
    let alpha = c.sum();
    let scale: f64 = c.iter().map(|ci| ci.norm()).sum();
    let exists = alpha.norm() > exist_tol * scale;
    let gamma = exists.then(|| c.map(|ci| ci / alpha));
    CoefficientSolve {
        method: Method::Mpe,
        k,
        c_prime: Some(c_prime),
        c: Some(c),
        alpha: Some(alpha),
        h: None,
        lambda: None,
        gamma,
        exists,
        pivot,
    }
}

/// RRE coefficients from `R_k`, the full triangular factor of `f`.
pub fn rre_coefficients(f: &WqrFactors) -> Result<CoefficientSolve> {
    let k = f.k().ok_or(Error::InvalidStage { k: 0, reason: "no factored columns" })?;
    rre_from_r(k, f.r(), f.pivot(k))
}

/// `r` supplies the leading `(k+1) x (k+1)` block `R_k`.
pub(crate) fn rre_from_r(k: usize, r: &CMatrix, pivot: f64) -> Result<CoefficientSolve> {
    let ones = CVector::from_element(k + 1, C64::new(1.0, 0.0));
    let y = solve_upper_adjoint(r, &ones);
    let h = solve_upper(r, &y);
    let lambda = C64::new(1.0, 0.0) / h.sum();
    if !(lambda.re > 0.0) || !lambda.re.is_finite() || lambda.im.abs() > LAMBDA_IMAG_TOL * lambda.re {
        return Err(Error::LambdaNotPositive { re: lambda.re, im: lambda.im });
    }
    let gamma = h.map(|hi| hi * lambda);
    Ok(CoefficientSolve {
        method: Method::Rre,
        k,
        c_prime: None,
        c: None,
        alpha: None,
        h: Some(h),
        lambda: Some(lambda.re),
        gamma: Some(gamma),
        exists: true,
        pivot,
    })
}

/// `xi_j = sum_{i=j+1}^k gamma_i` via `xi_0 = 1 - gamma_0`,
/// `xi_j = xi_{j-1} - gamma_j`.
pub fn xi_from_gamma(gamma: &CVector) -> CVector {
    let k = gamma.len().saturating_sub(1);
    let mut xi = CVector::zeros(k);
    let mut acc = C64::new(1.0, 0.0);
    for j in 0..k {
        acc -= gamma[j];
        xi[j] = acc;
    }
    xi
}

/// An assembled extrapolant and the intermediate vectors that produced it.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub s: CVector,
    pub xi: CVector,
    pub eta: CVector,
}

pub fn assemble(x0: &CVector, f: &WqrFactors, solve: &CoefficientSolve) -> Result<CVector> {
    assemble_parts(x0, f, solve).map(|a| a.s)
}

/// `s_k = x_0 + Q_{k-1} eta`, `eta = R_{k-1} xi`. Only the leading `k`
/// columns of `f` are used, so `f` may hold more.
pub fn assemble_parts(x0: &CVector, f: &WqrFactors, solve: &CoefficientSolve) -> Result<Assembly> {
    let gamma = solve.gamma.as_ref().ok_or(Error::MpeNonexistent { k: solve.k })?;
    check_dim(f.dim(), x0.len())?;
    if f.ncols() < solve.k {
        return Err(Error::InvalidStage { k: solve.k, reason: "factors have fewer than k columns" });
    }
    Ok(assemble_gamma(x0, f, gamma))
}

fn assemble_gamma(x0: &CVector, f: &WqrFactors, gamma: &CVector) -> Assembly {
    let xi = xi_from_gamma(gamma);
    let eta = upper_mul(f.r(), &xi);
    let s = x0 + f.combine(&eta);
    Assembly { s, xi, eta }
}

/// Closed-form `|||U_k gamma_k|||` without forming `U_k gamma_k`.
pub fn residual_estimate(f: &WqrFactors, solve: &CoefficientSolve) -> Result<f64> {
    if f.ncols() < solve.k {
        return Err(Error::InvalidStage { k: solve.k, reason: "factors have fewer than k columns" });
    }
    match solve.method {
        Method::Mpe => {
            let gamma = solve.gamma.as_ref().ok_or(Error::MpeNonexistent { k: solve.k })?;
            Ok(solve.pivot * gamma[solve.k].norm())
        }
        Method::Rre => Ok(solve.lambda.unwrap_or(0.0).max(0.0).sqrt()),
    }
}

/// One stage of a run.
#[derive(Debug, Clone)]
pub struct ExtrapolationRecord {
    pub k: usize,
    pub mpe_exists: bool,
    /// Stage at which `u_k` was found dependent on `u_0..u_{k-1}`.
    pub terminal: bool,
    /// `[c'; 1]` of MPE, defined whether or not MPE exists.
    pub c: CVector,
    pub alpha: C64,
    /// `r_kk` (the deflated norm of `u_k` on a terminal stage).
    pub pivot: f64,
    pub lambda: f64,
    pub gamma_mpe: Option<CVector>,
    pub gamma_rre: CVector,
    pub phi_mpe: Option<f64>,
    pub phi_rre: f64,
    pub s_mpe: Option<CVector>,
    pub s_rre: CVector,
    pub xi_mpe: Option<CVector>,
    pub eta_mpe: Option<CVector>,
    pub xi_rre: CVector,
    pub eta_rre: CVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    /// Every requested stage was computed with full-rank factors.
    Completed,
    /// `u_{k0}` is a combination of `u_0..u_{k0-1}`; stage `k0` is the last.
    DependenceDetected { k0: usize },
    /// `u_{k0}` vanished to within underflow; `x_{k0}` is a fixed point.
    Converged { k0: usize },
}

impl RunStatus {
    pub fn k0(&self) -> Option<usize> {
        match *self {
            RunStatus::Completed => None,
            RunStatus::DependenceDetected { k0 } | RunStatus::Converged { k0 } => Some(k0),
        }
    }
}

/// A complete run. `factors` holds the final full-rank factorization, whose
/// leading blocks are the factors of every earlier stage.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub dim: usize,
    pub x0: CVector,
    pub records: Vec<ExtrapolationRecord>,
    pub status: RunStatus,
    pub factors: Option<WqrFactors>,
    pub differences: Option<DifferenceMatrix>,
}

impl RunHistory {
    pub fn record(&self, k: usize) -> Option<&ExtrapolationRecord> {
        self.records.get(k)
    }
}

/// Run MPE and RRE on `x_0..x_{k_max+1}` for `k = 0..=k_eff`, where `k_eff`
/// is `k_max` or the detected `k0`, whichever comes first.
pub fn run(xs: &[CVector], w: &WeightOperator, k_max: usize, methods: Methods, tol: &Tolerances) -> Result<RunHistory> {
    let needed = k_max + 2;
    if xs.len() < needed {
        return Err(Error::InsufficientVectors { needed, got: xs.len() });
    }
    let n = w.dim();
    for x in &xs[..needed] {
        check_dim(n, x.len())?;
    }
    let mut u = DifferenceMatrix::from_sequence(&xs[..needed])?;
    let x0 = xs[0].clone();
    let mut f = WqrFactors::empty(n);
    let mut records: Vec<ExtrapolationRecord> = Vec::with_capacity(k_max + 1);
    let mut status = RunStatus::Completed;

    for k in 0..=k_max {
        let proj = f.project(&u.columns()[k], w, tol.reorthogonalize)?;
        let underflow = proj.incoming_norm * proj.incoming_norm < f64::MIN_POSITIVE;
        let dependent = underflow || k >= n || proj.is_dependent(tol.rank);
        if !dependent {
            f = f.extended(proj, w);
            records.push(full_rank_stage(&x0, &f, k, methods, tol)?);
            continue;
        }
        u.set_detected_k0(k);
        status = if underflow { RunStatus::Converged { k0: k } } else { RunStatus::DependenceDetected { k0: k } };
        records.push(terminal_stage(&x0, &f, k, proj, underflow, records.last(), methods, tol)?);
        break;
    }

    Ok(RunHistory { dim: n, x0, records, status, factors: Some(f), differences: Some(u) })
}

fn full_rank_stage(x0: &CVector, f: &WqrFactors, k: usize, methods: Methods, tol: &Tolerances) -> Result<ExtrapolationRecord> {
    let mpe = mpe_coefficients(f, tol.exist)?;
    let rre = rre_coefficients(f)?;
    let phi_rre = residual_estimate(f, &rre)?;
    let phi_mpe = if mpe.exists { Some(residual_estimate(f, &mpe)?) } else { None };
    let rre_parts = assemble_parts(x0, f, &rre)?;
    let mpe_parts = match (&mpe.gamma, methods.mpe) {
        (Some(_), true) => Some(assemble_parts(x0, f, &mpe)?),
        _ => None,
    };
    Ok(ExtrapolationRecord {
        k,
        mpe_exists: mpe.exists,
        terminal: false,
        c: mpe.c.expect("MPE solve carries c"),
        alpha: mpe.alpha.expect("MPE solve carries alpha"),
        pivot: f.pivot(k),
        lambda: rre.lambda.expect("RRE solve carries lambda"),
        gamma_mpe: mpe.gamma,
        gamma_rre: rre.gamma.expect("RRE always exists"),
        phi_mpe,
        phi_rre,
        s_mpe: mpe_parts.as_ref().map(|a| a.s.clone()),
        xi_mpe: mpe_parts.as_ref().map(|a| a.xi.clone()),
        eta_mpe: mpe_parts.map(|a| a.eta),
        s_rre: rre_parts.s,
        xi_rre: rre_parts.xi,
        eta_rre: rre_parts.eta,
    })
}

/// Stage `k = k0`. `f` holds `Q_{k-1}, R_{k-1}` and `proj` the deflation of
/// `u_k` against them.
#[allow(clippy::too_many_arguments)]
fn terminal_stage(
    x0: &CVector,
    f: &WqrFactors,
    k: usize,
    proj: Projection,
    underflow: bool,
    previous: Option<&ExtrapolationRecord>,
    methods: Methods,
    tol: &Tolerances,
) -> Result<ExtrapolationRecord> {
    if k == 0 {
        // u_0 itself vanished: s_0 = x_0 and nothing else is defined.
        let one = CVector::from_element(1, C64::new(1.0, 0.0));
        return Ok(ExtrapolationRecord {
            k,
            mpe_exists: true,
            terminal: true,
            c: one.clone(),
            alpha: C64::new(1.0, 0.0),
            pivot: proj.incoming_norm,
            lambda: proj.incoming_norm * proj.incoming_norm,
            gamma_mpe: Some(one.clone()),
            gamma_rre: one,
            phi_mpe: Some(proj.incoming_norm),
            phi_rre: proj.incoming_norm,
            s_mpe: methods.mpe.then(|| x0.clone()),
            s_rre: x0.clone(),
            xi_mpe: methods.mpe.then(|| CVector::zeros(0)),
            eta_mpe: methods.mpe.then(|| CVector::zeros(0)),
            xi_rre: CVector::zeros(0),
            eta_rre: CVector::zeros(0),
        });
    }
    let pivot = if underflow { 0.0 } else { proj.residual_norm };
    let mpe = mpe_from_parts(k, f.r(), &proj.coeffs, pivot, tol.exist);

    // R_k with the (tiny) deflated norm on the diagonal. When that pivot is
    // zero or the triangular solves overflow, fall back to the limit: RRE
    // coincides with MPE, or stagnates when MPE does not exist.
    let mut rre = None;
    if pivot > 0.0 {
        let mut r = f.r().clone().resize(k + 1, k + 1, C64::new(0.0, 0.0));
        for i in 0..k {
            r[(i, k)] = proj.coeffs[i];
        }
        r[(k, k)] = C64::new(pivot, 0.0);
        if let Ok(solve) = rre_from_r(k, &r, pivot) {
            if solve.gamma.as_ref().is_some_and(|g| g.iter().all(|x| x.re.is_finite() && x.im.is_finite())) {
                rre = Some(solve);
            }
        }
    }
    let (gamma_rre, lambda) = match (rre, &mpe.gamma) {
        (Some(solve), _) => (solve.gamma.expect("RRE gamma"), solve.lambda.expect("RRE lambda")),
        (None, Some(g)) => {
            let phi = pivot * g[k].norm();
            (g.clone(), phi * phi)
        }
        (None, None) => {
            let prev = previous.expect("k > 0 has a previous stage");
            let g = prev.gamma_rre.clone().resize_vertically(k + 1, C64::new(0.0, 0.0));
            (g, prev.lambda)
        }
    };
    let phi_mpe = mpe.gamma.as_ref().map(|g| pivot * g[k].norm());
    let rre_parts = assemble_gamma(x0, f, &gamma_rre);
    let mpe_parts = match (&mpe.gamma, methods.mpe) {
        (Some(g), true) => Some(assemble_gamma(x0, f, g)),
        _ => None,
    };
    Ok(ExtrapolationRecord {
        k,
        mpe_exists: mpe.exists,
        terminal: true,
        c: mpe.c.expect("MPE solve carries c"),
        alpha: mpe.alpha.expect("MPE solve carries alpha"),
        pivot,
        lambda,
        gamma_mpe: mpe.gamma,
        gamma_rre,
        phi_mpe,
        phi_rre: lambda.max(0.0).sqrt(),
        s_mpe: mpe_parts.as_ref().map(|a| a.s.clone()),
        xi_mpe: mpe_parts.as_ref().map(|a| a.xi.clone()),
        eta_mpe: mpe_parts.map(|a| a.eta),
        s_rre: rre_parts.s,
        xi_rre: rre_parts.xi,
        eta_rre: rre_parts.eta,
    })
}
