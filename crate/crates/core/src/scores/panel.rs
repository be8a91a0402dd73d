//! Panel scores: first-differenced fixed-effects PLR/PLIV and the doubly
//! robust group-time ATT.

use crate::error::{DmlError, Result};
use crate::matrix::Matrix;

use super::ScoreComponents;

/// Per-unit sums over periods of `dZ~ (dY - gy)` and `dZ~ (dD - gd)`, where
/// `dZ~ = dZ - gz`. All inputs are `units x (T-1)`.
pub fn fe_plr_components(
    dy: &Matrix,
    dd: &Matrix,
    dz: &Matrix,
    gy: &Matrix,
    gd: &Matrix,
    gz: &Matrix,
) -> Result<ScoreComponents> {
    if dy.ncols() == 0 {
        return Err(DmlError::validation(
            "fixed-effects score needs at least two periods",
        ));
    }
    let n = dy.nrows();
    let mut psi_a = vec![0.0; n];
    let mut psi_b = vec![0.0; n];
    for i in 0..n {
        for t in 0..dy.ncols() {
            let zt = dz.get(i, t) - gz.get(i, t);
            psi_b[i] += zt * (dy.get(i, t) - gy.get(i, t));
            psi_a[i] += zt * (dd.get(i, t) - gd.get(i, t));
        }
    }
    let mut c = ScoreComponents::new(psi_a, psi_b);
    let m = crate::numeric::mean(&c.psi_a);
    if m.abs() < 1e-8 {
        c.warnings
            .push(format!("weak instrument: mean psi_a = {m:e}"));
    }
    Ok(c)
}

/// Group-time ATT. `cohort` marks units first treated at g, `comparison`
/// the not-yet-treated units at t; `h1 = P(cohort|X)`, `h0 =
/// P(comparison|X)`, `l0 = E[dY | comparison, X]`, `p = P(cohort)`.
pub fn gtatt_components(
    dy: &[f64],
    cohort: &[f64],
    comparison: &[f64],
    h0: &[f64],
    h1: &[f64],
    l0: &[f64],
    p: f64,
) -> Result<ScoreComponents> {
    if !cohort.contains(&1.0) {
        return Err(DmlError::ident("no units in the treated cohort"));
    }
    if !comparison.contains(&1.0) {
        return Err(DmlError::ident("no comparison units"));
    }
    if let Some(i) = h0.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(DmlError::numerical(format!(
            "comparison propensity {} at unit {} is not inside (0, 1)",
            h0[i],
            i + 1
        )));
    }
    let n = dy.len();
    let psi_b = (0..n)
        .map(|i| {
            let e = dy[i] - l0[i];
            (cohort[i] * e - h1[i] * comparison[i] * e / h0[i]) / p
        })
        .collect();
    let psi_a = cohort.iter().map(|&c| c / p).collect();
    Ok(ScoreComponents::new(psi_a, psi_b))
}
