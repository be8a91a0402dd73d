use nalgebra::DMatrix;

use crate::error::{DmlError, Result};
use crate::numeric;

/// Convex combination weights over candidate predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct StackFit {
    pub weights: Vec<f64>,
    /// Mean squared error of the combined prediction.
    pub objective: f64,
    pub iterations: usize,
}

/// Euclidean projection onto `{w >= 0, sum w = 1}` (sort-and-threshold).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn mse(y: &[f64], candidates: &[&[f64]], w: &[f64]) -> f64 {
    let n = y.len() as f64;
    numeric::sum(y.iter().enumerate().map(|(i, &yi)| {
        let fit: f64 = candidates.iter().zip(w).map(|(c, wj)| c[i] * wj).sum();
        (yi - fit) * (yi - fit)
    })) / n
}

/// Minimizes `mean (y - sum_j w_j c_j)^2` over the simplex by projected
/// gradient descent with step `1/L`, stopping once the objective changes by
/// less than `1e-8` relative to its value.
pub fn stack_weights(y: &[f64], candidates: &[&[f64]]) -> Result<StackFit> {
    let m = candidates.len();
    if m == 0 {
        return Err(DmlError::arg("stacking needs at least one candidate"));
    }
    let n = y.len();
    for (j, c) in candidates.iter().enumerate() {
        if c.len() != n {
            return Err(DmlError::arg(format!(
                "candidate {j} has {} predictions, expected {n}",
                c.len()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(DmlError::arg(format!("candidate {j} has non-finite predictions")));
        }
    }
    let nf = n as f64;
    let gram = DMatrix::from_fn(m, m, |a, b| {
        numeric::sum(candidates[a].iter().zip(candidates[b]).map(|(x, z)| x * z)) / nf
    });
    let cross: Vec<f64> = candidates
        .iter()
        .map(|c| numeric::sum(c.iter().zip(y).map(|(x, z)| x * z)) / nf)
        .collect();
    let yy = numeric::sum(y.iter().map(|v| v * v)) / nf;
    let lipschitz = 2.0 * gram.clone().symmetric_eigen().eigenvalues.max();
    let objective = |w: &[f64]| -> f64 {
        let mut q = 0.0;
        for a in 0..m {
            for b in 0..m {
                q += w[a] * gram[(a, b)] * w[b];
            }
        }
        q - 2.0 * w.iter().zip(&cross).map(|(a, b)| a * b).sum::<f64>() + yy
    };

    let mut w = vec![1.0 / m as f64; m];
    let mut f = objective(&w);
    let mut iterations = 0;
    if m > 1 && lipschitz > 0.0 {
        let step = 1.0 / lipschitz;
        for it in 1..=1_000_000 {
            iterations = it;
            let grad: Vec<f64> = (0..m)
                .map(|a| 2.0 * ((0..m).map(|b| gram[(a, b)] * w[b]).sum::<f64>() - cross[a]))
                .collect();
            let trial: Vec<f64> = w.iter().zip(&grad).map(|(wi, g)| wi - step * g).collect();
            let next = project_simplex(&trial);
            let f_next = objective(&next);
            let change = (f - f_next).abs();
            w = next;
            let done = change <= 1e-8 * f_next.abs().max(f64::MIN_POSITIVE) || change == 0.0;
            f = f_next;
            if done {
                break;
            }
        }
    }
    Ok(StackFit {
        objective: mse(y, candidates, &w),
        weights: w,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_candidate_gets_all_weight() {
        let y = [1.0, 2.0, 3.0];
        let fit = stack_weights(&y, &[&[1.5, 1.5, 2.5]]).unwrap();
        assert_eq!(fit.weights, vec![1.0]);
    }

    #[test]
    fn perfect_candidate_dominates() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let other: Vec<f64> = y.iter().map(|v| 0.5 * v + 0.2).collect();
        let fit = stack_weights(&y, &[&y, &other]).unwrap();
        assert!((fit.weights[0] - 1.0).abs() < 1e-4, "{:?}", fit.weights);
        assert!(fit.weights[1].abs() < 1e-4);
    }

    #[test]
    fn duplicate_candidates_share_the_objective() {
        let y = [0.0, 1.0, 4.0, 2.0, 3.0];
        let c = [0.5, 1.5, 3.0, 2.5, 2.0];
        let single = stack_weights(&y, &[&c]).unwrap();
        let dup = stack_weights(&y, &[&c, &c]).unwrap();
        assert!((single.objective - dup.objective).abs() < 1e-10);
        assert!((dup.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_prediction_rejected() {
        assert!(stack_weights(&[1.0, 2.0], &[&[1.0, f64::NAN]]).is_err());
    }

    proptest! {
        #[test]
        fn weights_on_simplex(
            y in proptest::collection::vec(-10.0f64..10.0, 12),
            a in proptest::collection::vec(-10.0f64..10.0, 12),
            b in proptest::collection::vec(-10.0f64..10.0, 12),
            c in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let fit = stack_weights(&y, &[&a, &b, &c]).unwrap();
            prop_assert!(fit.weights.iter().all(|&w| w >= 0.0));
            prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let w = project_simplex(&v);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
