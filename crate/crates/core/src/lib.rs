//! Minimal polynomial extrapolation (MPE) and reduced rank extrapolation
//! (RRE) for vector sequences in `C^N` under an arbitrary weighted inner
//! product `<y, z> = y* M z`.
//!
//! The crate is organised bottom-up:
//!
//! * [`wspace`]: weight operators, inner products and norms.
//! * [`wqr`]: weighted QR factorization by (modified) Gram-Schmidt.
//! * [`extrap`]: the unified MPE/RRE algorithm and residual estimates.
//! * [`relations`]: checks of the identities tying MPE and RRE together.
//! * [`krylov`]: weighted FOM and GMR for `(I - T) x = d`.
//! * [`harness`]: fixed-point problems, sequences and fixtures.
//! * [`io`]: Matrix Market, vector and history files.
//! * [`cli`]: the `vextrap` command line front end.

pub mod cli;
pub mod error;
pub mod extrap;
pub mod harness;
pub mod io;
pub mod krylov;
pub mod operator;
pub mod relations;
pub mod tri;
pub mod wqr;
pub mod wspace;

pub use error::{Error, Result};
pub use wspace::{CMatrix, CVector, WeightOperator, C64};

/// Every numerical threshold the toolkit uses, with its default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative deflation threshold for detecting `k0`.
    pub rank: f64,
    /// MPE exists when `|alpha| > exist * sum |c_i|`.
    pub exist: f64,
    /// RRE stagnates when `|||s_k - s_{k-1}||| <= stag * (1 + |||s_k|||)`.
    pub stag: f64,
    /// A stage is on a plateau when `phi_k / phi_{k-1} > 1 - plateau`.
    pub plateau: f64,
    /// Second MGS pass on every new column.
    pub reorthogonalize: bool,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rank: wqr::DEFAULT_RANK_TOL,
            exist: extrap::DEFAULT_EXIST_TOL,
            stag: relations::DEFAULT_STAG_TOL,
            plateau: relations::DEFAULT_PLATEAU_TOL,
            reorthogonalize: false,
        }
    }
}

impl Tolerances {
    pub fn qr_options(&self) -> wqr::QrOptions {
        wqr::QrOptions { rank_tol: self.rank, reorthogonalize: self.reorthogonalize }
    }
}
