//! Generic debiasing of a linear-in-θ base score by additive corrections
//! `alpha(B) * (A - gamma(B))`, one per conditional-expectation nuisance.

use crate::error::{DmlError, Result};

use super::ScoreComponents;

/// One correction term. The adjustment factor may depend on θ linearly:
/// `alpha(B) = alpha + theta * alpha_theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub a: Vec<f64>,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_theta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentSpec {
    pub base: ScoreComponents,
    pub corrections: Vec<Correction>,
}

/// Adds every correction to the base components.
///
/// With `psi = psi_b - psi_a * theta`, the θ-free part of a correction goes
/// into `psi_b` and the θ coefficient enters `psi_a` with its sign flipped.
pub fn orthogonalize(adj: AdjustmentSpec) -> Result<ScoreComponents> {
    let mut out = adj.base;
    let n = out.psi_b.len();
    for (k, c) in adj.corrections.iter().enumerate() {
        let lens_ok = c.a.len() == n
            && c.gamma.len() == n
            && c.alpha.len() == n
            && c.alpha_theta.as_ref().is_none_or(|v| v.len() == n);
        if !lens_ok {
            return Err(DmlError::arg(format!(
                "correction {k} is not aligned with the {n} base observations"
            )));
        }
        for i in 0..n {
            let resid = c.a[i] - c.gamma[i];
            out.psi_b[i] += c.alpha[i] * resid;
            if let Some(at) = &c.alpha_theta {
                out.psi_a[i] -= at[i] * resid;
            }
        }
    }
    Ok(out)
}
