//! Checks of the identities that tie MPE and RRE together on a run.
//!
//! With `phi` the weighted residual norm `|||U_k gamma_k|||`:
//!
//! * master identity: `R_k g^R_k / phi^R_k^2 = [R_{k-1} g^R_{k-1} / phi^R_{k-1}^2; 0]
//!   + conj(alpha_k) / r_kk e_k`, valid whether or not MPE exists;
//! * stagnation: `s^RRE_k = s^RRE_{k-1}` exactly when `s^MPE_k` does not
//!   exist, and then `g^R_k = [g^R_{k-1}; 0]`;
//! * phi coupling: `1/phi^R_k^2 = 1/phi^R_{k-1}^2 + 1/phi^M_k^2`, with the
//!   same relation between `U_k g / phi^2` (residual coupling) and between
//!   `s / phi^2` (extrapolant coupling);
//! * `phi^M_k = phi^R_k / sqrt(1 - (phi^R_k / phi^R_{k-1})^2)` and
//!   `1/phi^R_k^2 = sum over S_k of 1/phi^M_i^2`, where `S_k` collects the
//!   stages `i <= k` at which MPE exists.
//!
//! Every check reports a relative defect
//! `|a - b - c| / max(|a|, |b| + |c|)` instead of asserting. When the run
//! still carries its factors, both sides are rebuilt from `R` and the
//! recorded coefficient vectors; histories read from disk fall back on the
//! recorded `phi` values.
//!
//! The stage at which dependence was detected is excluded from the coupling
//! checks: there `phi` is zero up to rounding and `1/phi^2` is meaningless.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::extrap::{ExtrapolationRecord, RunHistory};
use crate::tri::upper_mul;
use crate::wspace::{CVector, WeightOperator};
use crate::Tolerances;

/// Default stagnation threshold, relative to `1 + |||s_k|||`.
pub const DEFAULT_STAG_TOL: f64 = 1e-10;

/// Default plateau threshold on `phi^R_k / phi^R_{k-1}`.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-6;

/// Default pass threshold on relative defects.
pub const DEFAULT_DEFECT_TOL: f64 = 1e-9;

/// Slack on the strict decrease of `phi^R`.
const DECREASE_SLACK: f64 = 1e-12;

/// Stand-in for an unbounded defect, kept finite so it serializes.
const HUGE_DEFECT: f64 = f64::MAX;

/// Outcome of one identity at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Check {
    Defect(f64),
    /// The identity's hypotheses do not hold at this stage.
    NotApplicable,
}

impl Check {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Check::Defect(d) => Some(d),
            Check::NotApplicable => None,
        }
    }

    /// NaN defects count as failures.
    pub fn exceeds(&self, tol: f64) -> bool {
        self.value().is_some_and(|d| !(d <= tol))
    }

    pub fn is_applicable(&self) -> bool {
        matches!(self, Check::Defect(_))
    }
}

fn relative(diff: f64, a: f64, bc: f64) -> Check {
    let scale = a.max(bc).max(f64::MIN_POSITIVE);
    Check::Defect(diff / scale)
}

/// `(a - b - c)` relative to `max(|a|, |b| + |c|)`.
fn scalar_defect(a: f64, b: f64, c: f64) -> Check {
    relative((a - b - c).abs(), a.abs(), b.abs() + c.abs())
}

fn vector_defect(a: &CVector, b: &CVector, c: &CVector) -> Check {
    relative((a - b - c).norm(), a.norm(), b.norm() + c.norm())
}

/// `[v; 0]`.
fn pad(v: &CVector) -> CVector {
    v.clone().resize_vertically(v.len() + 1, Default::default())
}

/// Quantities of one stage, rebuilt from `R` when possible.
struct Stage<'a> {
    record: &'a ExtrapolationRecord,
    phi_rre: f64,
    phi_mpe: Option<f64>,
    /// `R_k g^R_k`.
    rg_rre: Option<CVector>,
    /// `R_k g^M_k`.
    rg_mpe: Option<CVector>,
    /// `r_kk`.
    pivot: Option<f64>,
}

impl Stage<'_> {
    fn coupling_applies(&self) -> bool {
        !self.record.terminal && self.phi_rre > 0.0
    }
}

fn stages(history: &RunHistory) -> Vec<Stage<'_>> {
    history
        .records
        .iter()
        .map(|rec| {
            let factors = history.factors.as_ref().filter(|f| !rec.terminal && f.ncols() > rec.k);
            match factors {
                Some(f) => {
                    let rg_rre = upper_mul(f.r(), &rec.gamma_rre);
                    let rg_mpe = rec.gamma_mpe.as_ref().map(|g| upper_mul(f.r(), g));
                    Stage {
                        record: rec,
                        phi_rre: rg_rre.norm(),
                        phi_mpe: rg_mpe.as_ref().map(|v| v.norm()),
                        rg_rre: Some(rg_rre),
                        rg_mpe,
                        pivot: Some(f.pivot(rec.k)),
                    }
                }
                None => Stage {
                    record: rec,
                    phi_rre: rec.phi_rre,
                    phi_mpe: rec.phi_mpe,
                    rg_rre: None,
                    rg_mpe: None,
                    pivot: None,
                },
            }
        })
        .collect()
}

/// Master identity per stage. `NotApplicable` at `k = 0`, on the terminal
/// stage and when the factors are gone.
pub fn check_master_identity(history: &RunHistory) -> Vec<Check> {
    let st = stages(history);
    (0..st.len()).map(|k| master_at(&st, k)).collect()
}

fn master_at(st: &[Stage<'_>], k: usize) -> Check {
    if k == 0 || !st[k].coupling_applies() || !st[k - 1].coupling_applies() {
        return Check::NotApplicable;
    }
    let (Some(cur), Some(prev), Some(pivot)) = (&st[k].rg_rre, &st[k - 1].rg_rre, st[k].pivot) else {
        return Check::NotApplicable;
    };
    let lhs = cur / crate::C64::new(cur.norm_squared(), 0.0);
    let b = pad(&(prev / crate::C64::new(prev.norm_squared(), 0.0)));
    let alpha = st[k].record.c.sum();
    let mut c = CVector::zeros(k + 1);
    c[k] = alpha.conj() / pivot;
    vector_defect(&lhs, &b, &c)
}

/// `(stagnates, mpe_exists)` for one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagnationFlags {
    pub k: usize,
    pub stagnates: bool,
    pub mpe_exists: bool,
}

impl StagnationFlags {
    pub fn consistent(&self) -> bool {
        self.stagnates != self.mpe_exists
    }
}

/// Stagnation flags without judging them.
pub fn stagnation_flags(history: &RunHistory, w: &WeightOperator, stag_tol: f64) -> Result<Vec<StagnationFlags>> {
    check_dim(history.dim, w.dim())?;
    let recs = &history.records;
    let mut out = Vec::with_capacity(recs.len());
    for (k, rec) in recs.iter().enumerate() {
        let stagnates = if k == 0 {
            false
        } else {
            let step = w.norm(&(&rec.s_rre - &recs[k - 1].s_rre))?;
            step <= stag_tol * (1.0 + w.norm(&rec.s_rre)?)
        };
        out.push(StagnationFlags { k, stagnates, mpe_exists: rec.mpe_exists });
    }
    Ok(out)
}

/// Flags per stage. Fails with `RelationViolation` at the first stage where
/// stagnation and MPE existence are not complementary.
pub fn check_stagnation(history: &RunHistory, w: &WeightOperator, stag_tol: f64) -> Result<Vec<StagnationFlags>> {
    let flags = stagnation_flags(history, w, stag_tol)?;
    if let Some(bad) = flags.iter().find(|f| !f.consistent()) {
        return Err(Error::RelationViolation {
            k: bad.k,
            detail: format!("stagnates = {}, mpe_exists = {}", bad.stagnates, bad.mpe_exists),
        });
    }
    Ok(flags)
}

/// `|g^R_k - [g^R_{k-1}; 0]| / |g^R_k|`, applicable where MPE does not exist.
fn gamma_embedding(history: &RunHistory, k: usize) -> Check {
    let rec = &history.records[k];
    if k == 0 || rec.mpe_exists {
        return Check::NotApplicable;
    }
    let prev = pad(&history.records[k - 1].gamma_rre);
    relative((&rec.gamma_rre - &prev).norm(), rec.gamma_rre.norm(), prev.norm())
}

/// The coupling identities at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub k: usize,
    pub phi_coupling: Check,
    pub residual_coupling: Check,
    pub extrapolant_coupling: Check,
    /// `phi^R_k < phi^R_{k-1}`; `None` where MPE does not exist or `k = 0`.
    pub strict_decrease: Option<bool>,
}

pub fn check_coupling(history: &RunHistory) -> Vec<Coupling> {
    let st = stages(history);
    (0..st.len()).map(|k| coupling_at(&st, k)).collect()
}

fn coupling_at(st: &[Stage<'_>], k: usize) -> Coupling {
    let na = Coupling {
        k,
        phi_coupling: Check::NotApplicable,
        residual_coupling: Check::NotApplicable,
        extrapolant_coupling: Check::NotApplicable,
        strict_decrease: None,
    };
    if k == 0 || !st[k].record.mpe_exists {
        return na;
    }
    let strict_decrease = Some(st[k].phi_rre < st[k - 1].phi_rre * (1.0 + DECREASE_SLACK));
    let phi_m = match st[k].phi_mpe {
        Some(p) if p > 0.0 && st[k].coupling_applies() && st[k - 1].coupling_applies() => p,
        _ => return Coupling { strict_decrease, ..na },
    };
    let (a2, b2, c2) = (st[k].phi_rre.powi(2), st[k - 1].phi_rre.powi(2), phi_m.powi(2));
    let phi_coupling = scalar_defect(1.0 / a2, 1.0 / b2, 1.0 / c2);

    let residual_coupling = match (&st[k].rg_rre, &st[k - 1].rg_rre, &st[k].rg_mpe) {
        (Some(cur), Some(prev), Some(m)) => {
            let scale = |v: &CVector, p: f64| v / crate::C64::new(p, 0.0);
            vector_defect(&scale(cur, a2), &pad(&scale(prev, b2)), &scale(m, c2))
        }
        _ => Check::NotApplicable,
    };

    let extrapolant_coupling = match &st[k].record.s_mpe {
        Some(s_m) => {
            let scale = |v: &CVector, p: f64| v / crate::C64::new(p, 0.0);
            vector_defect(
                &scale(&st[k].record.s_rre, a2),
                &scale(&st[k - 1].record.s_rre, b2),
                &scale(s_m, c2),
            )
        }
        None => Check::NotApplicable,
    };

    Coupling { k, phi_coupling, residual_coupling, extrapolant_coupling, strict_decrease }
}

/// The two corollaries at one stage, plus the set `S_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corollaries {
    pub k: usize,
    /// `phi^M_k` against `phi^R_k / sqrt(1 - (phi^R_k / phi^R_{k-1})^2)`.
    pub mpe_from_rre_ratio: Check,
    /// `1/phi^R_k^2` against `sum over S_k of 1/phi^M_i^2`.
    pub rre_from_mpe_sum: Check,
    pub s_set: Vec<usize>,
}

pub fn check_corollaries(history: &RunHistory) -> Vec<Corollaries> {
    let st = stages(history);
    let mut s_set = Vec::new();
    let mut sum = 0.0f64;
    let mut sum_ok = true;
    let mut out = Vec::with_capacity(st.len());
    for k in 0..st.len() {
        let stage = &st[k];
        if stage.record.mpe_exists {
            s_set.push(k);
            match stage.phi_mpe {
                Some(p) if p > 0.0 && stage.coupling_applies() => sum += 1.0 / (p * p),
                _ => sum_ok = false,
            }
        }
        let rre_from_mpe_sum = if sum_ok && stage.coupling_applies() {
            scalar_defect(1.0 / stage.phi_rre.powi(2), sum, 0.0)
        } else {
            Check::NotApplicable
        };
        let mpe_from_rre_ratio = match stage.phi_mpe {
            Some(pm) if k > 0 && stage.coupling_applies() && st[k - 1].coupling_applies() => {
                let ratio = stage.phi_rre / st[k - 1].phi_rre;
                if ratio < 1.0 {
                    let rhs = stage.phi_rre / (1.0 - ratio * ratio).sqrt();
                    scalar_defect(pm, rhs, 0.0)
                } else {
                    Check::Defect(HUGE_DEFECT)
                }
            }
            _ => Check::NotApplicable,
        };
        out.push(Corollaries { k, mpe_from_rre_ratio, rre_from_mpe_sum, s_set: s_set.clone() });
    }
    out
}

/// Inclusive stage range.
pub type Range = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakPlateauReport {
    /// Maximal ranges on which `phi^M` increases (nonexistence counts as an
    /// increase).
    pub peaks: Vec<Range>,
    /// Maximal ranges on which `phi^R_k / phi^R_{k-1} > 1 - plateau_tol`.
    pub plateaus: Vec<Range>,
    pub overlaps: Vec<Range>,
    pub plateau_tol: f64,
}

fn ranges(flags: &[bool]) -> Vec<Range> {
    let mut out = Vec::new();
    let mut start = None;
    for (k, &on) in flags.iter().enumerate() {
        match (on, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push((s, k - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, flags.len() - 1));
    }
    out
}

/// Peaks of the MPE residual estimates next to plateaus of the RRE ones.
/// The thresholds are editorial: "plateau" means a ratio above
/// `1 - plateau_tol`.
pub fn peak_plateau_report(history: &RunHistory, plateau_tol: f64) -> PeakPlateauReport {
    let recs = &history.records;
    let mut peak = vec![false; recs.len()];
    let mut plateau = vec![false; recs.len()];
    for k in 1..recs.len() {
        peak[k] = match (recs[k].phi_mpe, recs[k - 1].phi_mpe) {
            (None, _) => true,
            (Some(cur), Some(prev)) => cur > prev,
            (Some(_), None) => false,
        };
        let prev = recs[k - 1].phi_rre;
        plateau[k] = prev > 0.0 && recs[k].phi_rre / prev > 1.0 - plateau_tol;
    }
    let overlap: Vec<bool> = peak.iter().zip(&plateau).map(|(a, b)| *a && *b).collect();
    PeakPlateauReport { peaks: ranges(&peak), plateaus: ranges(&plateau), overlaps: ranges(&overlap), plateau_tol }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Both sides rebuilt from the triangular factors.
    Factors,
    /// Recorded `phi` values (history read from disk).
    Recorded,
}

/// Everything checked at one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEntry {
    pub k: usize,
    pub terminal: bool,
    pub stagnation_detected: bool,
    pub mpe_exists: bool,
    pub master_identity: Check,
    pub gamma_embedding: Check,
    pub phi_coupling: Check,
    pub residual_coupling: Check,
    pub extrapolant_coupling: Check,
    pub mpe_from_rre_ratio: Check,
    pub rre_from_mpe_sum: Check,
    /// Strict decrease of `phi^R` where MPE exists, otherwise
    /// `phi^R_k <= phi^R_{k-1}`.
    pub monotone: bool,
    pub s_set: Vec<usize>,
}

impl RelationEntry {
    fn checks(&self) -> [(&'static str, Check); 7] {
        [
            ("master_identity", self.master_identity),
            ("gamma_embedding", self.gamma_embedding),
            ("phi_coupling", self.phi_coupling),
            ("residual_coupling", self.residual_coupling),
            ("extrapolant_coupling", self.extrapolant_coupling),
            ("mpe_from_rre_ratio", self.mpe_from_rre_ratio),
            ("rre_from_mpe_sum", self.rre_from_mpe_sum),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub k: usize,
    pub relation: String,
    /// The defect, or for the boolean checks the relative excess.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub source: Source,
    pub defect_tol: f64,
    pub stag_tol: f64,
    pub entries: Vec<RelationEntry>,
    pub peak_plateau: PeakPlateauReport,
}

impl RelationReport {
    /// Every defect above `defect_tol`, every broken stagnation
    /// equivalence and every monotonicity failure, in stage order.
    pub fn failures(&self) -> Vec<Failure> {
        let mut out = Vec::new();
        for e in &self.entries {
            if e.stagnation_detected == e.mpe_exists {
                out.push(Failure { k: e.k, relation: "stagnation_equivalence".into(), value: 1.0 });
            }
            if !e.monotone {
                out.push(Failure { k: e.k, relation: "monotone".into(), value: 1.0 });
            }
            for (name, check) in e.checks() {
                if check.exceeds(self.defect_tol) {
                    let value = check.value().filter(|v| !v.is_nan()).unwrap_or(HUGE_DEFECT);
                    out.push(Failure { k: e.k, relation: name.into(), value });
                }
            }
        }
        out
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }

    /// The largest failing defect.
    pub fn worst(&self) -> Option<Failure> {
        self.failures().into_iter().max_by(|a, b| a.value.total_cmp(&b.value))
    }

    /// Largest applicable value of each named check over all stages.
    pub fn max_defects(&self) -> Vec<(&'static str, Option<f64>)> {
        let mut out: Vec<(&'static str, Option<f64>)> = Vec::new();
        for e in &self.entries {
            for (j, (name, check)) in e.checks().into_iter().enumerate() {
                if out.len() <= j {
                    out.push((name, None));
                }
                if let Some(v) = check.value() {
                    out[j].1 = Some(out[j].1.map_or(v, |m: f64| m.max(v)));
                }
            }
        }
        out
    }
}

/// Run every check on `history`. Relation failures are reported, not
/// raised; errors only come from a weight that does not fit the history.
pub fn verify(history: &RunHistory, w: &WeightOperator, tol: &Tolerances, defect_tol: f64) -> Result<RelationReport> {
    let flags = stagnation_flags(history, w, tol.stag)?;
    let master = check_master_identity(history);
    let coupling = check_coupling(history);
    let corollaries = check_corollaries(history);
    let recs = &history.records;
    let entries = (0..recs.len())
        .map(|k| {
            let rec = &recs[k];
            let monotone = match coupling[k].strict_decrease {
                Some(strict) => strict,
                None if k > 0 => rec.phi_rre <= recs[k - 1].phi_rre * (1.0 + DECREASE_SLACK),
                None => true,
            };
            RelationEntry {
                k,
                terminal: rec.terminal,
                stagnation_detected: flags[k].stagnates,
                mpe_exists: rec.mpe_exists,
                master_identity: master[k],
                gamma_embedding: gamma_embedding(history, k),
                phi_coupling: coupling[k].phi_coupling,
                residual_coupling: coupling[k].residual_coupling,
                extrapolant_coupling: coupling[k].extrapolant_coupling,
                mpe_from_rre_ratio: corollaries[k].mpe_from_rre_ratio,
                rre_from_mpe_sum: corollaries[k].rre_from_mpe_sum,
                monotone,
                s_set: corollaries[k].s_set.clone(),
            }
        })
        .collect();
    Ok(RelationReport {
        source: if history.factors.is_some() { Source::Factors } else { Source::Recorded },
        defect_tol,
        stag_tol: tol.stag,
        entries,
        peak_plateau: peak_plateau_report(history, tol.plateau),
    })
}
