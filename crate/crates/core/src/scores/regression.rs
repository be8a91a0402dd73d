//! Partially linear regression scores.

use crate::error::{DmlError, Result};
use crate::numeric;

use super::ScoreComponents;

fn weak_instrument_check(c: &mut ScoreComponents) {
    let m = numeric::mean(&c.psi_a);
    if m.abs() < 1e-8 {
        c.warnings
            .push(format!("weak instrument: mean psi_a = {m:e}"));
    }
}

/// Residual-on-residual score `(D - r)(Y - l) - (D - r)^2 theta`.
pub fn plr_components(y: &[f64], d: &[f64], l: &[f64], r: &[f64]) -> Result<ScoreComponents> {
    let n = y.len();
    let v: Vec<f64> = (0..n).map(|i| d[i] - r[i]).collect();
    let psi_a: Vec<f64> = v.iter().map(|x| x * x).collect();
    if psi_a.iter().all(|&a| a == 0.0) {
        return Err(DmlError::ident("no residual treatment variation"));
    }
    let psi_b = (0..n).map(|i| v[i] * (y[i] - l[i])).collect();
    Ok(ScoreComponents::new(psi_a, psi_b))
}

/// `(Z - E[Z|X]) (Y - l - theta (D - r))`.
pub fn pliv_components(
    y: &[f64],
    d: &[f64],
    z: &[f64],
    l: &[f64],
    r: &[f64],
    rz: &[f64],
) -> ScoreComponents {
    let n = y.len();
    let zt: Vec<f64> = (0..n).map(|i| z[i] - rz[i]).collect();
    let mut c = ScoreComponents::new(
        (0..n).map(|i| zt[i] * (d[i] - r[i])).collect(),
        (0..n).map(|i| zt[i] * (y[i] - l[i])).collect(),
    );
    weak_instrument_check(&mut c);
    c
}

/// PLIV with the instrument `E[D|Z,X] - E[D|X]`.
pub fn pliv_flex_components(
    y: &[f64],
    d: &[f64],
    l: &[f64],
    r: &[f64],
    m: &[f64],
) -> ScoreComponents {
    let n = y.len();
    let inst: Vec<f64> = (0..n).map(|i| m[i] - r[i]).collect();
    let mut c = ScoreComponents::new(
        (0..n).map(|i| inst[i] * (d[i] - r[i])).collect(),
        (0..n).map(|i| inst[i] * (y[i] - l[i])).collect(),
    );
    weak_instrument_check(&mut c);
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(c: &ScoreComponents) -> f64 {
        c.psi_b.iter().sum::<f64>() / c.psi_a.iter().sum::<f64>()
    }

    #[test]
    fn residual_ratio() {
        // residual pairs (1, 2) and (-1, -2)
        let c = plr_components(&[2.0, -2.0], &[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(solve(&c), 2.0);
    }

    #[test]
    fn plr_without_treatment_variation() {
        let err = plr_components(&[1.0, 2.0], &[0.5, 0.5], &[0.0, 0.0], &[0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("no residual treatment variation"));
    }

    #[test]
    fn pliv_with_instrument_equal_to_treatment_is_plr() {
        let y = [1.0, 3.0, 2.0, 5.0];
        let d = [0.2, 1.1, 0.7, 1.9];
        let l = [1.5, 2.5, 2.0, 3.0];
        let r = [0.5, 0.9, 0.8, 1.2];
        let a = plr_components(&y, &d, &l, &r).unwrap();
        let b = pliv_components(&y, &d, &d, &l, &r, &r);
        assert_eq!(a.psi_a, b.psi_a);
        assert_eq!(a.psi_b, b.psi_b);
    }

    #[test]
    fn constant_optimal_instrument_warns() {
        let c = pliv_flex_components(&[1.0, 2.0], &[0.0, 1.0], &[1.5, 1.5], &[0.5, 0.5], &[0.5, 0.5]);
        assert!(!c.warnings.is_empty());
    }
}
