//! Cross-sectional least-squares regression used by the backward sweeps.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge added to the normal matrix diagonal (relative to its trace scale).
pub const RIDGE: f64 = 1e-8;
/// Condition-number ceiling before the regression is declared singular.
pub const COND_LIMIT: f64 = 1e12;
/// Maximum total degree of the polynomial feature map.
pub const POLY_DEGREE: u32 = 3;

/// Fitted conditional-expectation surface: coefficients in the feature basis.
#[derive(Clone, Debug)]
pub struct Fit {
    pub coeffs: Vec<f64>,
    pub cond: f64,
}

impl Fit {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.coeffs
            .iter()
            .zip(features)
            .map(|(c, f)| c * f)
            .sum()
    }
}

/// Ridge least squares of `targets` on `rows` (one feature row per sample).
/// `step` only labels the error.
pub fn fit(rows: &[Vec<f64>], targets: &[f64], step: usize) -> Result<Fit> {
    assert_eq!(rows.len(), targets.len());
    let n = rows.len();
    let k = rows[0].len();
    let x = DMatrix::from_fn(n, k, |i, j| rows[i][j]);
    let y = DVector::from_column_slice(targets);

    let mut xtx = x.transpose() * &x;
    let scale = xtx.diagonal().iter().fold(0.0f64, |a, &d| a.max(d)).max(1.0);
    for i in 0..k {
        xtx[(i, i)] += RIDGE * scale;
    }
    let xty = x.transpose() * y;

    let svd = xtx.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > COND_LIMIT {
        return Err(Error::SingularRegression { step, cond });
    }
    let sol = svd
        .solve(&xty, 0.0)
        .map_err(|_| Error::SingularRegression { step, cond })?;
    Ok(Fit {
        coeffs: sol.iter().copied().collect(),
        cond,
    })
}

/// Monomial features of total degree <= POLY_DEGREE in the given variables,
/// constant term first. Order is deterministic (degree-lexicographic).
pub fn poly_features(vars: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0];
    let d = vars.len();
    // Enumerate exponent multi-indices by total degree.
    let mut expo = vec![0u32; d];
    for total in 1..=POLY_DEGREE {
        enumerate(&mut expo, 0, total, vars, &mut out);
    }
    out
}

fn enumerate(expo: &mut [u32], pos: usize, remaining: u32, vars: &[f64], out: &mut Vec<f64>) {
    if pos == expo.len() {
        if remaining == 0 {
            let mut v = 1.0;
            for (e, &x) in expo.iter().zip(vars) {
                v *= x.powi(*e as i32);
            }
            out.push(v);
        }
        return;
    }
    for e in (0..=remaining).rev() {
        expo[pos] = e;
        enumerate(expo, pos + 1, remaining - e, vars, out);
        expo[pos] = 0;
    }
}

/// Number of features `poly_features` emits for `d` variables.
pub fn poly_feature_count(d: usize) -> usize {
    // C(d + POLY_DEGREE, POLY_DEGREE)
    let mut n = 1usize;
    for i in 1..=POLY_DEGREE as usize {
        n = n * (d + i) / i;
    }
    n
}
