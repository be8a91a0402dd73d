//! Scores for binary-treatment effects: ATE (IPW, regression adjustment,
//! doubly robust), weighted average potential outcomes, ATT and LATE.

use crate::error::{DmlError, Result};

use super::adjust::{orthogonalize, AdjustmentSpec, Correction};
use super::ScoreComponents;

fn check_propensity(name: &str, r: &[f64]) -> Result<()> {
    if let Some(i) = r.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
        return Err(DmlError::numerical(format!(
            "{name} = {} at observation {} is not strictly inside (0, 1)",
            r[i],
            i + 1
        )));
    }
    Ok(())
}

/// Riesz representer of the ATE: `D/r - (1-D)/(1-r)`.
pub fn ate_alpha(d: &[f64], r: &[f64]) -> Result<Vec<f64>> {
    check_propensity("propensity", r)?;
    Ok(d.iter()
        .zip(r)
        .map(|(&di, &ri)| di / ri - (1.0 - di) / (1.0 - ri))
        .collect())
}

/// `alpha (Y - l(D, X)) + l(1, X) - l(0, X)` with unit Jacobian.
pub fn ate_dr_components(
    y: &[f64],
    d: &[f64],
    alpha: &[f64],
    l0: &[f64],
    l1: &[f64],
) -> ScoreComponents {
    let psi_b = (0..y.len())
        .map(|i| {
            let ld = d[i] * l1[i] + (1.0 - d[i]) * l0[i];
            alpha[i] * (y[i] - ld) + l1[i] - l0[i]
        })
        .collect();
    ScoreComponents::new(vec![1.0; y.len()], psi_b)
}

pub fn ate_ipw_components(y: &[f64], alpha: &[f64]) -> ScoreComponents {
    let psi_b = y.iter().zip(alpha).map(|(a, b)| a * b).collect();
    ScoreComponents::new(vec![1.0; y.len()], psi_b)
}

pub fn ate_ra_components(l0: &[f64], l1: &[f64]) -> ScoreComponents {
    let psi_b = l1.iter().zip(l0).map(|(a, b)| a - b).collect();
    ScoreComponents::new(vec![1.0; l0.len()], psi_b)
}

/// Weighted average potential outcome at level `d`: the IPW base
/// `1{D=d} w Y / r_d` plus the correction `-(l_d w / r_d)(1{D=d} - r_d)`.
pub fn wapo_components(
    y: &[f64],
    d: &[f64],
    level: f64,
    omega: &[f64],
    r_d: &[f64],
    l_d: &[f64],
) -> Result<ScoreComponents> {
    check_propensity("level propensity", r_d)?;
    let n = y.len();
    let ind: Vec<f64> = d.iter().map(|&v| f64::from(u8::from(v == level))).collect();
    let base = ScoreComponents::new(
        vec![1.0; n],
        (0..n).map(|i| ind[i] * omega[i] * y[i] / r_d[i]).collect(),
    );
    orthogonalize(AdjustmentSpec {
        base,
        corrections: vec![Correction {
            a: ind,
            gamma: r_d.to_vec(),
            alpha: (0..n).map(|i| -l_d[i] * omega[i] / r_d[i]).collect(),
            alpha_theta: None,
        }],
    })
}

/// Doubly robust ATT with `p = mean(D)` computed on the full sample.
pub fn att_dr_components(
    y: &[f64],
    d: &[f64],
    r: &[f64],
    l0: &[f64],
    p: f64,
) -> Result<ScoreComponents> {
    if p <= 0.0 {
        return Err(DmlError::ident("no treated observations"));
    }
    check_propensity("propensity", r)?;
    let n = y.len();
    let psi_b = (0..n)
        .map(|i| {
            let e = y[i] - l0[i];
            (d[i] * e - (1.0 - d[i]) * e * r[i] / (1.0 - r[i])) / p
        })
        .collect();
    let psi_a = d.iter().map(|&di| di / p).collect();
    Ok(ScoreComponents::new(psi_a, psi_b))
}

/// LATE for a binary instrument. The IPW-in-Z Wald moment is debiased with a
/// correction whose adjustment factor is linear in θ; its θ part lands in
/// `psi_a`, giving the doubly robust numerator and denominator.
#[allow(clippy::too_many_arguments)]
pub fn late_dr_components(
    y: &[f64],
    d: &[f64],
    z: &[f64],
    rz: &[f64],
    mu0: &[f64],
    mu1: &[f64],
    nu0: &[f64],
    nu1: &[f64],
) -> Result<ScoreComponents> {
    check_propensity("instrument propensity", rz)?;
    let n = y.len();
    let ipw = |v: &[f64], i: usize| z[i] * v[i] / rz[i] - (1.0 - z[i]) * v[i] / (1.0 - rz[i]);
    let base = ScoreComponents::new(
        (0..n).map(|i| ipw(d, i)).collect(),
        (0..n).map(|i| ipw(y, i)).collect(),
    );
    let mut out = orthogonalize(AdjustmentSpec {
        base,
        corrections: vec![Correction {
            a: z.to_vec(),
            gamma: rz.to_vec(),
            alpha: (0..n)
                .map(|i| -mu1[i] / rz[i] - mu0[i] / (1.0 - rz[i]))
                .collect(),
            alpha_theta: Some(
                (0..n)
                    .map(|i| nu1[i] / rz[i] + nu0[i] / (1.0 - rz[i]))
                    .collect(),
            ),
        }],
    })?;
    let mean_a = crate::numeric::mean(&out.psi_a);
    if mean_a.abs() < 1e-8 {
        out.warnings
            .push(format!("weak first stage: mean psi_a = {mean_a:e}"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dr_hand_values() {
        let a = ate_alpha(&[1.0], &[0.5]).unwrap();
        let c = ate_dr_components(&[1.0], &[1.0], &a, &[0.0], &[1.0]);
        assert_eq!(c.psi_b, vec![1.0]);
        assert_eq!(c.psi_a, vec![1.0]);

        let a = ate_alpha(&[0.0], &[0.25]).unwrap();
        let c = ate_dr_components(&[2.0], &[0.0], &a, &[1.0], &[3.0]);
        assert!((c.psi_b[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dr_with_zero_residual_is_regression_contrast() {
        let a = ate_alpha(&[1.0, 0.0], &[0.3, 0.6]).unwrap();
        let c = ate_dr_components(&[4.0, 1.5], &[1.0, 0.0], &a, &[1.0, 1.5], &[4.0, 2.0]);
        assert_eq!(c.psi_b, vec![3.0, 0.5]);
    }

    #[test]
    fn ipw_hand_values() {
        let a = ate_alpha(&[1.0, 0.0, 1.0], &[0.5, 0.5, 0.3]).unwrap();
        let c = ate_ipw_components(&[1.0, 1.0, 0.0], &a);
        assert_eq!(c.psi_b, vec![2.0, -2.0, 0.0]);
    }

    #[test]
    fn ra_hand_values() {
        let c = ate_ra_components(&[1.0, 2.0], &[3.0, 2.0]);
        assert_eq!(c.psi_b, vec![2.0, 0.0]);
    }

    #[test]
    fn wapo_hand_values() {
        let c = wapo_components(&[2.0], &[1.0], 1.0, &[1.0], &[0.5], &[1.0]).unwrap();
        assert_eq!(c.psi_b, vec![3.0]);
        let c = wapo_components(&[2.0], &[0.0], 1.0, &[2.5], &[0.5], &[1.2]).unwrap();
        assert_eq!(c.psi_b, vec![2.5 * 1.2]);
    }

    #[test]
    fn att_two_row_fixture() {
        // untreated row fitted exactly; treated residual 5 - 3
        let c = att_dr_components(&[5.0, 1.0], &[1.0, 0.0], &[0.5, 0.5], &[3.0, 1.0], 0.5).unwrap();
        let theta = c.psi_b.iter().sum::<f64>() / c.psi_a.iter().sum::<f64>();
        assert_eq!(theta, 2.0);
    }

    #[test]
    fn att_without_treated_fails() {
        let err = att_dr_components(&[1.0], &[0.0], &[0.5], &[1.0], 0.0).unwrap_err();
        assert!(err.to_string().contains("no treated observations"));
    }

    #[test]
    fn propensity_at_boundary_rejected() {
        assert!(ate_alpha(&[1.0], &[1.0]).is_err());
        assert!(ate_alpha(&[1.0], &[0.0]).is_err());
    }
}
