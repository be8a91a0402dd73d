//! Least squares, ridge and cross-validated lasso.

use nalgebra::{DMatrix, DVector};

use crate::data::make_folds;
use crate::error::{DmlError, Result};
use crate::matrix::Matrix;
use crate::numeric;

/// Intercept plus slopes on the original feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearFit {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coef).map(|(x, b)| x * b).sum::<f64>()
    }
}

/// Column means and population SDs; a constant column gets SD 0.
pub(crate) struct Standardizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn new(x: &Matrix) -> Self {
        let (means, sds) = (0..x.ncols())
            .map(|j| {
                let c = x.column(j);
                (numeric::mean(&c), numeric::sd_pop(&c))
            })
            .unzip();
        Self { means, sds }
    }

    /// Column-major standardized copy; constant columns become zeros.
    pub fn apply(&self, x: &Matrix) -> Vec<Vec<f64>> {
        (0..x.ncols())
            .map(|j| {
                let (m, s) = (self.means[j], self.sds[j]);
                (0..x.nrows())
                    .map(|i| if s > 0.0 { (x.get(i, j) - m) / s } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    fn unscale(&self, b: &[f64], y_mean: f64) -> LinearFit {
        let coef: Vec<f64> = b
            .iter()
            .zip(&self.sds)
            .map(|(&bj, &s)| if s > 0.0 { bj / s } else { 0.0 })
            .collect();
        let shift = numeric::sum(coef.iter().zip(&self.means).map(|(c, m)| c * m));
        LinearFit {
            intercept: y_mean - shift,
            coef,
        }
    }
}

fn to_dmatrix(cols: &[Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Least squares with an intercept. Rank-deficient designs get the
/// minimum-norm solution through the pseudo-inverse.
pub fn ols(x: &Matrix, y: &[f64]) -> Result<LinearFit> {
    let n = x.nrows();
    let p = x.ncols();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n.max(p + 1) as f64) * f64::EPSILON;
    let beta = svd
        .solve(&rhs, eps)
        .map_err(|e| DmlError::numerical(format!("least squares failed: {e}")))?;
    Ok(LinearFit {
        intercept: beta[0],
        coef: beta.iter().skip(1).copied().collect(),
    })
}

/// Ridge on unit-SD features with centred outcome:
/// `min_b ||y_c - X_s b||^2 + penalty * ||b||^2`.
pub fn ridge(x: &Matrix, y: &[f64], penalty: f64) -> Result<LinearFit> {
    let n = x.nrows();
    let st = Standardizer::new(x);
    let y_mean = numeric::mean(y);
    if x.ncols() == 0 {
        return Ok(st.unscale(&[], y_mean));
    }
    let xs = to_dmatrix(&st.apply(x), n);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let svd = xs.svd(true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let s = &svd.singular_values;
    let smax = s.max();
    let uty = u.transpose() * &yc;
    let mut scaled = DVector::zeros(s.len());
    for k in 0..s.len() {
        if s[k] > smax * 1e-12 * n as f64 {
            scaled[k] = s[k] * uty[k] / (s[k] * s[k] + penalty);
        }
    }
    let b = vt.transpose() * scaled;
    Ok(st.unscale(b.as_slice(), y_mean))
}

fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

/// Cyclic coordinate descent for `(1/2n)||y_c - X_s b||^2 + lambda ||b||_1`
/// on standardized columns, warm-started from `b`.
fn lasso_cd(xs: &[Vec<f64>], yc: &[f64], lambda: f64, b: &mut [f64], tol: f64) {
    let n = yc.len() as f64;
    let mut r: Vec<f64> = yc.to_vec();
    for (j, col) in xs.iter().enumerate() {
        if b[j] != 0.0 {
            for (ri, xij) in r.iter_mut().zip(col) {
                *ri -= xij * b[j];
            }
        }
    }
    let active: Vec<bool> = xs.iter().map(|c| c.iter().any(|&v| v != 0.0)).collect();
    for _sweep in 0..100_000 {
        let mut max_step: f64 = 0.0;
        for (j, col) in xs.iter().enumerate() {
            if !active[j] {
                continue;
            }
            let rho = col.iter().zip(&r).map(|(x, ri)| x * ri).sum::<f64>() / n + b[j];
            let new = soft_threshold(rho, lambda);
            let step = new - b[j];
            if step != 0.0 {
                for (ri, xij) in r.iter_mut().zip(col) {
                    *ri -= xij * step;
                }
                b[j] = new;
                max_step = max_step.max(step.abs());
            }
        }
        if max_step < tol {
            break;
        }
    }
}

fn lambda_max(xs: &[Vec<f64>], yc: &[f64]) -> f64 {
    let n = yc.len() as f64;
    xs.iter()
        .map(|c| (c.iter().zip(yc).map(|(x, y)| x * y).sum::<f64>() / n).abs())
        .fold(0.0, f64::max)
}

/// Geometric grid of `len` penalties from `lmax` down to `lmax * 1e-4`.
pub(crate) fn lambda_grid(lmax: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lmax];
    }
    (0..len)
        .map(|k| lmax * (1e-4f64).powf(k as f64 / (len - 1) as f64))
        .collect()
}

const CD_TOL: f64 = 1e-10;

/// Lasso at a fixed penalty on the standardized scale.
pub fn lasso(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearFit> {
    let st = Standardizer::new(x);
    let xs = st.apply(x);
    let y_mean = numeric::mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut b = vec![0.0; x.ncols()];
    // walk down a short path for a good warm start
    let lmax = lambda_max(&xs, &yc);
    if lambda < lmax {
        for l in lambda_grid(lmax, 20) {
            if l <= lambda {
                break;
            }
            lasso_cd(&xs, &yc, l, &mut b, CD_TOL);
        }
    }
    lasso_cd(&xs, &yc, lambda, &mut b, CD_TOL);
    Ok(st.unscale(&b, y_mean))
}

fn lasso_path(x: &Matrix, y: &[f64], grid: &[f64]) -> Vec<LinearFit> {
    let st = Standardizer::new(x);
    let xs = st.apply(x);
    let y_mean = numeric::mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let mut b = vec![0.0; x.ncols()];
    grid.iter()
        .map(|&l| {
            lasso_cd(&xs, &yc, l, &mut b, CD_TOL);
            st.unscale(&b, y_mean)
        })
        .collect()
}

/// Lasso with the penalty picked by `folds`-fold cross-validation over a
/// `grid_len`-point geometric grid, minimizing mean held-out squared error.
/// Returns the fit and the chosen penalty.
pub fn lasso_cv(
    x: &Matrix,
    y: &[f64],
    folds: usize,
    grid_len: usize,
    seed: u64,
) -> Result<(LinearFit, f64)> {
    let n = y.len();
    let st = Standardizer::new(x);
    let xs = st.apply(x);
    let y_mean = numeric::mean(y);
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let lmax = lambda_max(&xs, &yc);
    if lmax == 0.0 || x.ncols() == 0 {
        return Ok((st.unscale(&vec![0.0; x.ncols()], y_mean), 0.0));
    }
    let grid = lambda_grid(lmax, grid_len);
    let k = folds.min(n);
    let part = make_folds(n, k, seed)?;
    let mut cv_err = vec![0.0; grid.len()];
    for fold in 0..k {
        let train = part.complement(fold);
        let test = part.fold(fold);
        let xt = x.select_rows(&train);
        let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let path = lasso_path(&xt, &yt, &grid);
        for (g, fit) in path.iter().enumerate() {
            for &i in test {
                let e = y[i] - fit.predict_row(x.row(i));
                cv_err[g] += e * e;
            }
        }
    }
    let mut best = 0;
    for g in 1..grid.len() {
        if cv_err[g] < cv_err[best] {
            best = g;
        }
    }
    let mut b = vec![0.0; x.ncols()];
    for &l in &grid[..=best] {
        lasso_cd(&xs, &yc, l, &mut b, CD_TOL);
    }
    Ok((st.unscale(&b, y_mean), grid[best]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_design(n: usize, p: usize, seed: u64) -> (Matrix, Vec<f64>) {
        let mut r = rng::stream(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng::standard_normal(&mut r)).collect())
            .collect();
        let x = Matrix::from_rows(&rows);
        let y = rows
            .iter()
            .map(|row| {
                1.0 + row.iter().enumerate().map(|(j, v)| (j as f64 - 1.0) * v).sum::<f64>()
                    + 0.5 * rng::standard_normal(&mut r)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn ols_interpolates_exact_line() {
        let x = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let fit = ols(&x, &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.intercept - 1.0).abs() < 1e-10);
        assert!((fit.coef[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ols_rank_deficient_is_minimum_norm() {
        // duplicated column: the two slopes share the effect equally
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let fit = ols(&x, &[0.0, 2.0, 4.0, 6.0]).unwrap();
        assert!((fit.coef[0] - fit.coef[1]).abs() < 1e-10);
        assert!((fit.coef[0] + fit.coef[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn ridge_zero_matches_ols() {
        let (x, y) = random_design(50, 4, 1);
        let a = ols(&x, &y).unwrap();
        let b = ridge(&x, &y, 0.0).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-8);
        for (p, q) in a.coef.iter().zip(&b.coef) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn ridge_norm_shrinks_with_penalty() {
        let (x, y) = random_design(60, 5, 2);
        let st = Standardizer::new(&x);
        let mut last = f64::INFINITY;
        for pen in [0.0, 0.1, 1.0, 10.0, 100.0, 1000.0] {
            let fit = ridge(&x, &y, pen).unwrap();
            // norm of the standardized-scale coefficients is the shrunk quantity
            let norm: f64 = fit.coef.iter().zip(&st.sds).map(|(c, s)| (c * s).powi(2)).sum();
            assert!(norm <= last + 1e-12, "penalty {pen}");
            last = norm;
        }
    }

    #[test]
    fn lasso_zero_penalty_matches_ols() {
        let (x, y) = random_design(80, 4, 3);
        let a = ols(&x, &y).unwrap();
        let b = lasso(&x, &y, 0.0).unwrap();
        assert!((a.intercept - b.intercept).abs() < 1e-6);
        for (p, q) in a.coef.iter().zip(&b.coef) {
            assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        }
    }

    #[test]
    fn lasso_at_lambda_max_is_constant() {
        let (x, y) = random_design(40, 3, 4);
        let st = Standardizer::new(&x);
        let xs = st.apply(&x);
        let m = numeric::mean(&y);
        let yc: Vec<f64> = y.iter().map(|v| v - m).collect();
        let fit = lasso(&x, &y, lambda_max(&xs, &yc)).unwrap();
        assert!(fit.coef.iter().all(|&c| c == 0.0));
        assert!((fit.intercept - m).abs() < 1e-12);
    }

    #[test]
    fn cv_lasso_picks_small_penalty_on_dense_signal() {
        let (x, y) = random_design(200, 3, 5);
        let (fit, lambda) = lasso_cv(&x, &y, 5, 50, 9).unwrap();
        assert!(lambda < 0.1, "lambda {lambda}");
        assert!((fit.coef[2] - 1.0).abs() < 0.15);
    }
}
