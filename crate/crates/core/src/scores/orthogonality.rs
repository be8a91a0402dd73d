//! Finite-difference check of the Gateaux derivative of the averaged score
//! in the direction of a nuisance perturbation.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{DmlError, Result};
use crate::numeric;

use super::{NuisanceSet, ScoreProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub score: String,
    pub theta: f64,
    /// SD of the score at `theta`, the unit for the tolerance.
    pub scale: f64,
    pub lambdas: Vec<f64>,
    pub values: Vec<f64>,
    pub derivative: f64,
    /// Second-order coefficient of a least-squares quadratic through `(lambda, f)`.
    pub curvature: f64,
    pub tolerance: f64,
    pub orthogonal: bool,
}

/// Smooth bounded bumps, one per nuisance task.
///
/// Probability nuisances move by `0.2 v (1-v) cos(xbar)`, which keeps them
/// inside (0, 1) for |lambda| < 5. The k-th regression nuisance moves by
/// `SD(target) sin(xbar + k pi/2)`. `xbar` is the row mean of the task's
/// features (or `0.1 i` without features).
pub fn default_perturbations(
    problem: &ScoreProblem,
    eta: &NuisanceSet,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    let mut k = 0usize;
    for task in &problem.tasks {
        let xbar: Vec<f64> = if task.features.ncols() == 0 {
            (0..problem.n).map(|i| 0.1 * i as f64).collect()
        } else {
            task.features.row_means()
        };
        let v = eta.get(&task.name)?;
        let delta: Vec<f64> = if task.probability {
            v.iter()
                .zip(&xbar)
                .map(|(&p, &x)| 0.2 * p * (1.0 - p) * x.cos())
                .collect()
        } else {
            let fitted: Vec<f64> = match &task.subset {
                Some(m) => task
                    .target
                    .iter()
                    .zip(m)
                    .filter(|(_, &keep)| keep)
                    .map(|(&t, _)| t)
                    .collect(),
                None => task.target.clone(),
            };
            let s = numeric::sd(&fitted);
            let phase = k as f64 * FRAC_PI_2;
            k += 1;
            xbar.iter().map(|&x| s * (x + phase).sin()).collect()
        };
        out.insert(task.name.clone(), delta);
    }
    Ok(out)
}

fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(DmlError::arg("empty lambda grid"));
    }
    for &l in lambdas {
        if !l.is_finite() || l == 0.0 {
            return Err(DmlError::arg("lambda grid must hold finite nonzero values"));
        }
        if !lambdas.iter().any(|&m| m == -l) {
            return Err(DmlError::arg(format!(
                "lambda grid is not symmetric: {l} has no mirror"
            )));
        }
    }
    Ok(())
}

fn check_probabilities(
    problem: &ScoreProblem,
    eta: &NuisanceSet,
    delta: &BTreeMap<String, Vec<f64>>,
    lambdas: &[f64],
) -> Result<()> {
    for task in problem.tasks.iter().filter(|t| t.probability) {
        let Some(dv) = delta.get(&task.name) else {
            continue;
        };
        let v = eta.get(&task.name)?;
        for &l in lambdas {
            if let Some(i) = (0..v.len()).find(|&i| {
                let p = v[i] + l * dv[i];
                !(p > 0.0 && p < 1.0)
            }) {
                return Err(DmlError::arg(format!(
                    "perturbed {} leaves (0, 1) at observation {} for lambda = {l}",
                    task.name,
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates `f(lambda) = mean psi(W; theta, eta + lambda delta)` at `theta`
/// solved from the unperturbed score, over a grid symmetric about zero.
///
/// The derivative is a Richardson-extrapolated central difference built
/// from the two smallest step sizes.
pub fn check_orthogonality(
    problem: &ScoreProblem,
    eta: &NuisanceSet,
    delta: &BTreeMap<String, Vec<f64>>,
    lambdas: &[f64],
) -> Result<OrthogonalityReport> {
    check_grid(lambdas)?;
    check_probabilities(problem, eta, delta, lambdas)?;

    let base = problem.components(eta)?;
    let sa = numeric::sum(base.psi_a.iter().copied());
    if sa.abs() < 1e-12 * base.n() as f64 {
        return Err(DmlError::ident("score Jacobian is singular"));
    }
    let theta = numeric::sum(base.psi_b.iter().copied()) / sa;
    let scale = numeric::sd(&base.psi(theta));

    let mut grid: Vec<f64> = lambdas.to_vec();
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let f = |l: f64| -> Result<f64> {
        let c = problem.components(&eta.perturbed(delta, l)?)?;
        Ok(numeric::mean(&c.psi(theta)))
    };
    let values: Vec<f64> = grid.iter().map(|&l| f(l)).collect::<Result<_>>()?;
    let at = |l: f64| values[grid.iter().position(|&g| g == l).unwrap()];

    let steps: Vec<f64> = grid.iter().copied().filter(|&l| l > 0.0).collect();
    let central = |h: f64| (at(h) - at(-h)) / (2.0 * h);
    let derivative = match steps.as_slice() {
        [h] => central(*h),
        [h1, h2, ..] => {
            let (d1, d2) = (central(*h1), central(*h2));
            (h2 * h2 * d1 - h1 * h1 * d2) / (h2 * h2 - h1 * h1)
        }
        [] => unreachable!(),
    };

    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for (&l, &v) in grid.iter().zip(&values) {
        let row = Vector3::new(1.0, l, l * l);
        xtx += row * row.transpose();
        xty += row * v;
    }
    let curvature = if grid.len() >= 3 {
        xtx.lu()
            .solve(&xty)
            .map(|c| c[2])
            .ok_or_else(|| DmlError::numerical("quadratic fit is singular"))?
    } else {
        f64::NAN
    };

    let tolerance = 1e-3 * scale;
    Ok(OrthogonalityReport {
        score: problem.kind().to_string(),
        theta,
        scale,
        lambdas: grid,
        values,
        derivative,
        curvature,
        tolerance,
        orthogonal: derivative.abs() < tolerance,
    })
}
