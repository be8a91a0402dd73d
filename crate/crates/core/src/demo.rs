//! Synthetic designs with known structure, one per score family, plus an
//! oracle nuisance estimator for designs with discrete covariates.
//!
//! All covariates here except in [`nonlinear_seed`] take finitely many
//! values, so the empirical conditional mean within each covariate cell is
//! the exact sample analogue of the population regression.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::data::{Dataset, FoldPartition, Schema};
use crate::engine::NuisanceEstimator;
use crate::error::{DmlError, Result};
use crate::matrix::Matrix;
use crate::rng::{self, DmlRng};
use crate::scores::{NuisanceDiagnostics, NuisanceSet, ScoreKind, ScoreProblem};

/// Mean of `target` over the `subset` rows sharing each row's feature
/// values, evaluated for every row.
pub fn cell_means(x: &Matrix, target: &[f64], subset: Option<&[bool]>) -> Result<Vec<f64>> {
    let key = |i: usize| -> Vec<u64> { x.row(i).iter().map(|v| v.to_bits()).collect() };
    let mut cells: BTreeMap<Vec<u64>, (f64, usize)> = BTreeMap::new();
    for i in 0..target.len() {
        if subset.is_none_or(|s| s[i]) {
            let e = cells.entry(key(i)).or_insert((0.0, 0));
            e.0 += target[i];
            e.1 += 1;
        }
    }
    (0..target.len())
        .map(|i| match cells.get(&key(i)) {
            Some((s, c)) => Ok(s / *c as f64),
            None => Err(DmlError::validation(format!(
                "covariate cell of row {} has no training rows",
                i + 1
            ))),
        })
        .collect()
}

/// Fits every nuisance by full-sample cell means, ignoring any partition.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellMeanOracle;

impl NuisanceEstimator for CellMeanOracle {
    fn estimate(&self, problem: &ScoreProblem, _folds: Option<&FoldPartition>) -> Result<NuisanceSet> {
        let mut out = NuisanceSet {
            scalars: problem.scalars.clone(),
            ..NuisanceSet::default()
        };
        for task in &problem.tasks {
            let v = cell_means(&task.features, &task.target, task.subset.as_deref())?;
            out.diagnostics.insert(
                task.name.clone(),
                NuisanceDiagnostics {
                    learner: "cell_mean".into(),
                    r2: None,
                    clipped: 0,
                },
            );
            out.values.insert(task.name.clone(), v);
        }
        Ok(out)
    }
}

fn categorical(rng: &mut DmlRng, probs: &[f64]) -> usize {
    let u = rng::uniform(rng);
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn bernoulli(rng: &mut DmlRng, p: f64) -> f64 {
    f64::from(u8::from(rng::uniform(rng) < p))
}

fn cross_schema(instrument: bool) -> Schema {
    Schema {
        outcome: Some("y".into()),
        treatment: Some("d".into()),
        instrument: instrument.then(|| "z".into()),
        controls: vec!["x1".into(), "x2".into()],
        ..Schema::default()
    }
}

fn dataset(cols: Vec<(&str, Vec<f64>)>, schema: Schema) -> Dataset {
    Dataset::new(
        cols.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        schema,
    )
    .expect("synthetic design produces a valid dataset")
}

/// Propensity of the binary-treatment design.
pub fn binary_propensity(x1: f64, x2: f64) -> f64 {
    0.25 + 0.15 * x1 + 0.1 * x2
}

/// Mean outcome of the binary-treatment design.
pub fn binary_outcome_mean(d: f64, x1: f64, x2: f64) -> f64 {
    1.0 + x1 + 2.0 * x2 + d * (1.0 + x1)
}

/// Confounded binary treatment with `x1 in {0,1,2}` and `x2 in {0,1}`:
/// `P(D=1|X) = 0.25 + 0.15 x1 + 0.1 x2`,
/// `Y = 1 + x1 + 2 x2 + D (1 + x1) + N(0,1)`. Column `w = 1 + x2` is a
/// covariate-dependent weight. The ATE is 2.
pub fn binary_treatment(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let (mut y, mut d, mut x1, mut x2, mut w) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a = categorical(&mut rng, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) as f64;
        let b = bernoulli(&mut rng, 0.5);
        let di = bernoulli(&mut rng, binary_propensity(a, b));
        y.push(binary_outcome_mean(di, a, b) + rng::standard_normal(&mut rng));
        d.push(di);
        x1.push(a);
        x2.push(b);
        w.push(1.0 + b);
    }
    dataset(
        vec![("y", y), ("d", d), ("x1", x1), ("x2", x2), ("w", w)],
        cross_schema(false),
    )
}

/// Binary instrument with one-sided and two-sided noncompliance.
/// `P(Z=1|X) = 0.3 + 0.1 x1 + 0.2 x2`; with `U ~ U(0,1)` a unit is an
/// always-taker if `U < 0.15`, a never-taker if `U > 0.75 - 0.05 x1`, and a
/// complier otherwise. `Y = 0.5 + x1 + x2 + D (2 + 0.5 x1) + 2 (U - 0.5) + N(0,1)`.
pub fn binary_instrument(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let (mut y, mut d, mut z, mut x1, mut x2) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a = categorical(&mut rng, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) as f64;
        let b = bernoulli(&mut rng, 0.5);
        let zi = bernoulli(&mut rng, 0.3 + 0.1 * a + 0.2 * b);
        let u = rng::uniform(&mut rng);
        let di = if u < 0.15 {
            1.0
        } else if u > 0.75 - 0.05 * a {
            0.0
        } else {
            zi
        };
        let yi = 0.5 + a + b + di * (2.0 + 0.5 * a) + 2.0 * (u - 0.5) + rng::standard_normal(&mut rng);
        y.push(yi);
        d.push(di);
        z.push(zi);
        x1.push(a);
        x2.push(b);
    }
    dataset(
        vec![("y", y), ("d", d), ("z", z), ("x1", x1), ("x2", x2)],
        cross_schema(true),
    )
}

/// `D = 0.5 x1 - x2 + N(0,1)`, `Y = 1.5 D + sin(x1) + x2 + N(0,1)` with
/// `x1 in {0,..,3}`, `x2 in {0,1}`.
pub fn partially_linear(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let (mut y, mut d, mut x1, mut x2) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a = categorical(&mut rng, &[0.25; 4]) as f64;
        let b = bernoulli(&mut rng, 0.5);
        let di = 0.5 * a - b + rng::standard_normal(&mut rng);
        y.push(1.5 * di + a.sin() + b + rng::standard_normal(&mut rng));
        d.push(di);
        x1.push(a);
        x2.push(b);
    }
    dataset(
        vec![("y", y), ("d", d), ("x1", x1), ("x2", x2)],
        cross_schema(false),
    )
}

/// Endogenous treatment with a three-valued instrument:
/// `Z ~ Binomial(2, 0.3 + 0.1 x1)`, `D = 0.8 Z + 0.5 x1 + V`,
/// `Y = D + x1 - x2 + e` where `e = 0.6 V + N(0,1)` is centred within each
/// `(Z, x1, x2)` cell, so the instrument is exactly orthogonal to `e` in
/// sample.
pub fn linear_iv(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let (mut d, mut z, mut x1, mut x2, mut e) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let a = categorical(&mut rng, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) as f64;
        let b = bernoulli(&mut rng, 0.5);
        let p = 0.3 + 0.1 * a;
        let zi = bernoulli(&mut rng, p) + bernoulli(&mut rng, p);
        let v = rng::standard_normal(&mut rng);
        d.push(0.8 * zi + 0.5 * a + v);
        e.push(0.6 * v + rng::standard_normal(&mut rng));
        z.push(zi);
        x1.push(a);
        x2.push(b);
    }
    let cells = Matrix::from_columns(n, &[&z, &x1, &x2]);
    let centre = cell_means(&cells, &e, None).expect("every row has a cell");
    let y: Vec<f64> = (0..n)
        .map(|i| d[i] + x1[i] - x2[i] + e[i] - centre[i])
        .collect();
    dataset(
        vec![("y", y), ("d", d), ("z", z), ("x1", x1), ("x2", x2)],
        cross_schema(true),
    )
}

/// Balanced panel with unit effects: `x_it ~ Bernoulli(0.5)`,
/// `D_it = a_i + 0.8 x_it + N(0,1)`, `Y_it = c_i + theta D_it + x_it + N(0,1)`
/// where `a_i` and `c_i` are correlated unit effects.
pub fn fe_panel(units: usize, periods: usize, theta: f64, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for i in 0..units {
        let a = rng::standard_normal(&mut rng);
        let c = 2.0 * a + rng::standard_normal(&mut rng);
        for t in 0..periods {
            let x = bernoulli(&mut rng, 0.5);
            let d = a + 0.8 * x + rng::standard_normal(&mut rng);
            let y = c + theta * d + x + rng::standard_normal(&mut rng);
            for (k, v) in [
                ("unit", i as f64),
                ("time", t as f64 + 1.0),
                ("y", y),
                ("d", d),
                ("x", x),
            ] {
                cols.entry(k).or_default().push(v);
            }
        }
    }
    let schema = Schema {
        outcome: Some("y".into()),
        treatment: Some("d".into()),
        controls: vec!["x".into()],
        unit: Some("unit".into()),
        time: Some("time".into()),
        ..Schema::default()
    };
    dataset(cols.into_iter().collect(), schema)
}

/// First periods of the staggered design's cohorts.
pub const STAGGERED_PERIODS: [f64; 4] = [7.0, 8.0, 9.0, 10.0];

/// Staggered adoption over periods 7 to 10 with cohorts first treated at 8,
/// 9 and 10 and a never-treated group (coded 0 in the `group` column).
///
/// Cohort shares depend on `x1 in {0,1,2}`: `P(G=8) = 0.15 + 0.05 x1`,
/// `P(G=9) = P(G=10) = 0.2`. Outcomes follow
/// `Y_it = c_i + 0.5 (t-7) + 0.4 x1 (t-7) - 0.3 x2 (t-7) + tau 1{t >= G_i} + N(0,1)`,
/// so trends differ by covariates and parallel trends hold only
/// conditionally on X.
pub fn staggered_panel(units: usize, tau: f64, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for i in 0..units {
        let x1 = categorical(&mut rng, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]) as f64;
        let x2 = bernoulli(&mut rng, 0.5);
        let p8 = 0.15 + 0.05 * x1;
        let g = match categorical(&mut rng, &[p8, 0.2, 0.2, 0.45 - 0.05 * x1]) {
            0 => 8.0,
            1 => 9.0,
            2 => 10.0,
            _ => 0.0,
        };
        let c = 0.5 * x1 + rng::standard_normal(&mut rng);
        for &t in &STAGGERED_PERIODS {
            let s = t - 7.0;
            let treated = g > 0.0 && t >= g;
            let y = c + 0.5 * s + 0.4 * x1 * s - 0.3 * x2 * s
                + if treated { tau } else { 0.0 }
                + rng::standard_normal(&mut rng);
            for (k, v) in [
                ("unit", i as f64),
                ("time", t),
                ("group", g),
                ("y", y),
                ("x1", x1),
                ("x2", x2),
            ] {
                cols.entry(k).or_default().push(v);
            }
        }
    }
    let schema = Schema {
        outcome: Some("y".into()),
        controls: vec!["x1".into(), "x2".into()],
        unit: Some("unit".into()),
        time: Some("time".into()),
        group: Some("group".into()),
        ..Schema::default()
    };
    dataset(cols.into_iter().collect(), schema)
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Propensity surface of the nonlinear seed design.
pub fn seed_propensity(x: &[f64]) -> f64 {
    logistic(-0.3 + 1.2 * (x[0] - 0.5) + (PI * x[1]).sin() - 0.6 * x[3] * x[2] + 0.4 * x[4])
        .clamp(0.05, 0.95)
}

/// Untreated outcome surface of the nonlinear seed design.
pub fn seed_baseline(x: &[f64]) -> f64 {
    2.0 + 3.0 * x[0] * x[0] + 2.0 * (PI * x[1]).sin() + x[2] + 1.5 * x[3] + (2.0 * x[4]).cos()
}

/// Treatment effect surface of the nonlinear seed design.
pub fn seed_effect(x: &[f64]) -> f64 {
    1.0 + 2.0 * x[0] + 0.5 * x[3]
}

/// Seed sample for the calibrated simulation: five covariates
/// `x1, x2, x5 ~ U(0,1)`, `x3 ~ N(0,1)`, `x4 ~ Bernoulli(0.4)`, treatment
/// drawn from [`seed_propensity`], and
/// `Y = seed_baseline(X) + D seed_effect(X) + 3 N(0,1)`.
pub fn nonlinear_seed(n: usize, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed);
    let mut x: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let (mut y, mut d) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let row = [
            rng::uniform(&mut rng),
            rng::uniform(&mut rng),
            rng::standard_normal(&mut rng),
            bernoulli(&mut rng, 0.4),
            rng::uniform(&mut rng),
        ];
        let di = bernoulli(&mut rng, seed_propensity(&row));
        y.push(seed_baseline(&row) + di * seed_effect(&row) + 3.0 * rng::standard_normal(&mut rng));
        d.push(di);
        for (j, v) in row.iter().enumerate() {
            x[j].push(*v);
        }
    }
    let names = ["x1", "x2", "x3", "x4", "x5"];
    let mut cols = vec![("y", y), ("d", d)];
    for (name, col) in names.iter().zip(x) {
        cols.push((name, col));
    }
    let schema = Schema {
        outcome: Some("y".into()),
        treatment: Some("d".into()),
        controls: names.iter().map(|s| s.to_string()).collect(),
        ..Schema::default()
    };
    dataset(cols, schema)
}

/// The demo design used for each score.
pub fn design_for(kind: ScoreKind, n: usize, seed: u64) -> Dataset {
    match kind {
        ScoreKind::AteDr
        | ScoreKind::AteIpw
        | ScoreKind::AteRa
        | ScoreKind::Wapo
        | ScoreKind::AttDr => binary_treatment(n, seed),
        ScoreKind::LateDr => binary_instrument(n, seed),
        ScoreKind::Plr => partially_linear(n, seed),
        ScoreKind::Pliv | ScoreKind::PlivFlex => linear_iv(n, seed),
        ScoreKind::FePlr => fe_panel((n / 4).max(8), 4, 1.0, seed),
        ScoreKind::GtAtt => staggered_panel(n, 2.0, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_means_by_row_pattern() {
        let x = Matrix::from_columns(4, &[&[0.0, 1.0, 0.0, 1.0]]);
        let m = cell_means(&x, &[1.0, 2.0, 3.0, 6.0], None).unwrap();
        assert_eq!(m, vec![2.0, 4.0, 2.0, 4.0]);
        let sub = [true, true, false, false];
        assert_eq!(cell_means(&x, &[1.0, 2.0, 3.0, 6.0], Some(&sub)).unwrap(), vec![1.0, 2.0, 1.0, 2.0]);
        assert!(cell_means(&x, &[1.0; 4], Some(&[true, false, true, false])).is_err());
    }

    #[test]
    fn designs_are_reproducible() {
        let a = binary_treatment(50, 3);
        let b = binary_treatment(50, 3);
        assert_eq!(a.outcome().unwrap(), b.outcome().unwrap());
    }

    #[test]
    fn iv_error_is_centred_in_cells() {
        let ds = linear_iv(3000, 1);
        let n = ds.n();
        let (y, d) = (ds.outcome().unwrap(), ds.treatment().unwrap());
        let x1 = ds.column("x1").unwrap();
        let x2 = ds.column("x2").unwrap();
        let e: Vec<f64> = (0..n).map(|i| y[i] - d[i] - x1[i] + x2[i]).collect();
        let cells = Matrix::from_columns(n, &[ds.instrument().unwrap(), x1, x2]);
        for m in cell_means(&cells, &e, None).unwrap() {
            assert!(m.abs() < 1e-12);
        }
    }
}
