//! Shared fixtures and an exact-rational oracle for MPE and RRE.
//!
//! The oracle never touches the library: it forms the Gram matrix
//! `G = U* M U` of the difference vectors in exact arithmetic and solves
//! the two small systems by fraction-exact elimination.
#![allow(dead_code)]

use num_rational::Ratio;
use vextrap::wspace::real_vector;
use vextrap::{CVector, C64};

pub type Q = Ratio<i128>;

pub fn q(n: i128, d: i128) -> Q {
    Ratio::new(n, d)
}

pub fn qi(n: i128) -> Q {
    Ratio::from_integer(n)
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub fn to_cvector(v: &[Q]) -> CVector {
    CVector::from_iterator(v.len(), v.iter().map(|&x| C64::new(to_f64(x), 0.0)))
}

/// Gaussian elimination over the rationals; `None` when singular.
pub fn solve(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Option<Vec<Q>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| a[r][col] != qi(0))?;
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                let t = a[col][c];
                a[r][c] -= f * t;
            }
            let t = b[col];
            b[r] -= f * t;
        }
    }
    let mut x = vec![qi(0); n];
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in i + 1..n {
            s -= a[i][j] * x[j];
        }
        x[i] = s / a[i][i];
    }
    Some(x)
}

#[derive(Debug, Clone)]
pub struct OracleStage {
    pub alpha: Q,
    pub gamma_mpe: Option<Vec<Q>>,
    pub gamma_rre: Vec<Q>,
    pub s_mpe: Option<Vec<Q>>,
    pub s_rre: Vec<Q>,
    /// `|||U gamma|||^2`.
    pub phi2_mpe: Option<Q>,
    pub phi2_rre: Q,
}

/// Stage `k` of MPE and RRE on real `xs` under `diag(weights)`.
pub fn oracle(xs: &[Vec<Q>], weights: &[Q], k: usize) -> OracleStage {
    let n = weights.len();
    let u: Vec<Vec<Q>> = (0..=k).map(|i| (0..n).map(|l| xs[i + 1][l] - xs[i][l]).collect()).collect();
    let g: Vec<Vec<Q>> = (0..=k)
        .map(|i| (0..=k).map(|j| (0..n).map(|l| weights[l] * u[i][l] * u[j][l]).sum()).collect())
        .collect();
    let quad = |v: &[Q]| -> Q { (0..=k).map(|i| (0..=k).map(|j| v[i] * g[i][j] * v[j]).sum::<Q>()).sum() };
    let combine = |gamma: &[Q]| -> Vec<Q> { (0..n).map(|l| (0..=k).map(|i| gamma[i] * xs[i][l]).sum()).collect() };

    let lead: Vec<Vec<Q>> = (0..k).map(|i| g[i][..k].to_vec()).collect();
    let rhs: Vec<Q> = (0..k).map(|i| -g[i][k]).collect();
    let mut c = solve(lead, rhs).expect("leading Gram block is nonsingular");
    c.push(qi(1));
    let alpha: Q = c.iter().copied().sum();
    let gamma_mpe = (alpha != qi(0)).then(|| c.iter().map(|&ci| ci / alpha).collect::<Vec<_>>());

    // At k0 the Gram matrix is singular and RRE coincides with MPE.
    let gamma_rre: Vec<Q> = match solve(g.clone(), vec![qi(1); k + 1]) {
        Some(h) => {
            let sum: Q = h.iter().copied().sum();
            h.iter().map(|&hi| hi / sum).collect()
        }
        None => gamma_mpe.clone().expect("MPE exists at k0"),
    };

    OracleStage {
        alpha,
        s_mpe: gamma_mpe.as_ref().map(|gm| combine(gm)),
        phi2_mpe: gamma_mpe.as_ref().map(|gm| quad(gm)),
        s_rre: combine(&gamma_rre),
        phi2_rre: quad(&gamma_rre),
        gamma_mpe,
        gamma_rre,
    }
}

/// `x_{m+1} = diag(1/2, 1/4) x_m + (1/2, 3/4)` from zero, exactly.
pub fn demo_rational(m: usize) -> Vec<Vec<Q>> {
    let mut xs = vec![vec![qi(0), qi(0)]];
    for i in 0..m {
        let x = &xs[i];
        xs.push(vec![q(1, 2) * x[0] + q(1, 2), q(1, 4) * x[1] + q(3, 4)]);
    }
    xs
}

pub fn demo_sequence(m: usize) -> Vec<CVector> {
    demo_rational(m).iter().map(|x| to_cvector(x)).collect()
}

pub fn max_abs_diff(a: &CVector, b: &CVector) -> f64 {
    (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn real(v: &[f64]) -> CVector {
    real_vector(v)
}
