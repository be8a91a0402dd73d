//! Calibrated Monte Carlo: fit reduced forms on a seed sample, redraw
//! treatments and outcomes from them, and score six ATE estimators against
//! the known truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Dataset, Schema};
use crate::engine::{fit_components, LearnerMap, NuisanceEstimator};
use crate::error::{DmlError, Result};
use crate::learners::{fit, LearnerSpec, Target};
use crate::matrix::Matrix;
use crate::numeric;
use crate::rng;
use crate::scores::{NuisanceSet, ScoreKind, ScoreProblem, ScoreSpec};

/// Reduced-form surfaces evaluated at the seed covariate rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibratedDgp {
    #[serde(skip)]
    pub x: Matrix,
    #[serde(skip)]
    pub controls: Vec<String>,
    #[serde(skip)]
    pub r: Vec<f64>,
    #[serde(skip)]
    pub l0: Vec<f64>,
    #[serde(skip)]
    pub l1: Vec<f64>,
    pub sigma0: f64,
    pub sigma1: f64,
    pub true_ate: f64,
    pub n: usize,
}

/// Fits `P(D=1|X)` and the arm-specific regressions `E[Y|D=d,X]` on the
/// full seed sample and the arm residual variances.
pub fn calibrate_dgp(
    seed_ds: &Dataset,
    outcome: &LearnerSpec,
    propensity: &LearnerSpec,
    clip: f64,
) -> Result<CalibratedDgp> {
    let y = seed_ds.outcome()?;
    let d = seed_ds.treatment()?;
    if d.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(DmlError::validation("treatment must be binary"));
    }
    let x = seed_ds.controls();
    let r = fit(propensity, &x, d, Target::Probability { clip })?.predict(&x)?;
    let arm = |level: f64| -> Result<(Vec<f64>, f64)> {
        let rows: Vec<usize> = (0..y.len()).filter(|&i| d[i] == level).collect();
        if rows.len() < 2 {
            return Err(DmlError::validation(format!(
                "treatment arm {level} has {} rows (need at least 2)",
                rows.len()
            )));
        }
        let yt: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let model = fit(outcome, &x.select_rows(&rows), &yt, Target::Regression)?;
        let pred = model.predict(&x)?;
        let ss = numeric::sum(rows.iter().map(|&i| (y[i] - pred[i]).powi(2)));
        Ok((pred, (ss / rows.len() as f64).sqrt()))
    };
    let (l0, sigma0) = arm(0.0)?;
    let (l1, sigma1) = arm(1.0)?;
    let effects: Vec<f64> = l1.iter().zip(&l0).map(|(a, b)| a - b).collect();
    Ok(CalibratedDgp {
        n: x.nrows(),
        controls: seed_ds.schema().controls.clone(),
        true_ate: numeric::mean(&effects),
        x,
        r,
        l0,
        l1,
        sigma0,
        sigma1,
    })
}

/// A simulated sample and the seed rows its covariates came from.
#[derive(Debug, Clone)]
pub struct Draw {
    pub data: Dataset,
    pub rows: Vec<usize>,
}

impl CalibratedDgp {
    /// The true surfaces at the given seed rows.
    pub fn oracle(&self, rows: &[usize]) -> NuisanceSet {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let mut eta = NuisanceSet::default();
        eta.insert("r", pick(&self.r));
        eta.insert("l0", pick(&self.l0));
        eta.insert("l1", pick(&self.l1));
        eta
    }
}

/// Draws `D ~ Bernoulli(r(x_i))` and `Y = l_D(x_i) + sigma_D N(0,1)` for every
/// seed row, or for a bootstrap resample of rows when `resample` is set.
pub fn draw_sample(dgp: &CalibratedDgp, seed: u64, resample: bool) -> Result<Draw> {
    let mut rng = rng::stream(seed);
    let n = dgp.n;
    let rows: Vec<usize> = if resample {
        (0..n).map(|_| rng::below_inclusive(&mut rng, n - 1)).collect()
    } else {
        (0..n).collect()
    };
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for &i in &rows {
        let di = f64::from(u8::from(rng::uniform(&mut rng) < dgp.r[i]));
        let (mean, sd) = if di == 1.0 {
            (dgp.l1[i], dgp.sigma1)
        } else {
            (dgp.l0[i], dgp.sigma0)
        };
        y.push(mean + sd * rng::standard_normal(&mut rng));
        d.push(di);
    }
    let x = dgp.x.select_rows(&rows);
    let mut cols = vec![("y".to_string(), y), ("d".to_string(), d)];
    for (j, name) in dgp.controls.iter().enumerate() {
        cols.push((name.clone(), x.column(j)));
    }
    let schema = Schema {
        outcome: Some("y".into()),
        treatment: Some("d".into()),
        controls: dgp.controls.clone(),
        ..Schema::default()
    };
    Ok(Draw {
        data: Dataset::new(cols, schema)?,
        rows,
    })
}

/// How nuisances are obtained in each replication.
#[derive(Debug, Clone)]
pub enum McNuisance {
    Learners(LearnerMap),
    /// The true calibrated surfaces.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub replications: usize,
    pub folds: usize,
    pub alpha: f64,
    pub seed: u64,
    pub resample_covariates: bool,
    /// Median absolute deviation about the median estimate instead of the truth.
    pub mad_about_median: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            replications: 500,
            folds: 5,
            alpha: 0.05,
            seed: 20240917,
            resample_covariates: false,
            mad_about_median: false,
        }
    }
}

/// The six estimators in reporting order.
pub const ESTIMATORS: [(ScoreKind, bool); 6] = [
    (ScoreKind::AteIpw, false),
    (ScoreKind::AteRa, false),
    (ScoreKind::AteDr, false),
    (ScoreKind::AteIpw, true),
    (ScoreKind::AteRa, true),
    (ScoreKind::AteDr, true),
];

pub fn estimator_name(kind: ScoreKind, crossfit: bool) -> String {
    let short = match kind {
        ScoreKind::AteIpw => "ipw",
        ScoreKind::AteRa => "ra",
        _ => "dr",
    };
    format!("{short}_{}", if crossfit { "crossfit" } else { "full" })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McSummary {
    pub estimator: String,
    pub score: ScoreKind,
    pub crossfit: bool,
    pub mean_bias: f64,
    pub median_bias: f64,
    pub mad: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    pub replications: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub theta: f64,
    pub se: f64,
    pub ci: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub true_ate: f64,
    pub requested: usize,
    pub failed: usize,
    pub summaries: Vec<McSummary>,
    /// Per replication, one entry per estimator in [`ESTIMATORS`] order.
    #[serde(skip)]
    pub estimates: Vec<[McEstimate; 6]>,
}

fn reseeded(map: &LearnerMap, salt: u64) -> LearnerMap {
    let mut m = map.clone();
    m.regression.seed = rng::derive(m.regression.seed, salt);
    m.probability.seed = rng::derive(m.probability.seed, salt);
    for spec in m.overrides.values_mut() {
        spec.seed = rng::derive(spec.seed, salt);
    }
    m
}

fn replicate(
    dgp: &CalibratedDgp,
    nuisance: &McNuisance,
    cfg: &McConfig,
    s: usize,
) -> Result<[McEstimate; 6]> {
    let seed = rng::derive(cfg.seed, s as u64);
    let draw = draw_sample(dgp, seed, cfg.resample_covariates)?;
    let ds = &draw.data;
    let dr = ScoreProblem::new(ds, &ScoreSpec::new(ScoreKind::AteDr))?;
    let (eta_full, eta_cf) = match nuisance {
        McNuisance::Oracle => {
            let eta = dgp.oracle(&draw.rows);
            (eta.clone(), eta)
        }
        McNuisance::Learners(map) => {
            let map = reseeded(map, seed);
            let folds = make_folds(ds.n(), cfg.folds, rng::derive(seed, 1))?;
            (map.estimate(&dr, None)?, map.estimate(&dr, Some(&folds))?)
        }
    };
    let mut out = [McEstimate {
        theta: 0.0,
        se: 0.0,
        ci: [0.0; 2],
    }; 6];
    for (j, &(kind, crossfit)) in ESTIMATORS.iter().enumerate() {
        let problem = ScoreProblem::new(ds, &ScoreSpec::new(kind))?;
        let eta = if crossfit { &eta_cf } else { &eta_full };
        let f = fit_components(kind, problem.components(eta)?, cfg.alpha)?;
        out[j] = McEstimate {
            theta: f.theta,
            se: f.se,
            ci: f.ci,
        };
    }
    Ok(out)
}

/// Summary metrics for one estimator's replications.
pub fn summarize(
    estimator: &str,
    kind: ScoreKind,
    crossfit: bool,
    draws: &[McEstimate],
    truth: f64,
    mad_about_median: bool,
) -> McSummary {
    let thetas: Vec<f64> = draws.iter().map(|e| e.theta).collect();
    let s = draws.len();
    let med = numeric::median(&thetas);
    let centre = if mad_about_median { med } else { truth };
    let abs_dev: Vec<f64> = thetas.iter().map(|t| (t - centre).abs()).collect();
    let covered = draws
        .iter()
        .filter(|e| e.ci[0] <= truth && truth <= e.ci[1])
        .count();
    let coverage = covered as f64 / s as f64;
    McSummary {
        estimator: estimator.to_string(),
        score: kind,
        crossfit,
        mean_bias: numeric::mean(&thetas) - truth,
        median_bias: med - truth,
        mad: numeric::median(&abs_dev),
        sd: numeric::sd(&thetas),
        mean_se: numeric::mean(&draws.iter().map(|e| e.se).collect::<Vec<_>>()),
        coverage,
        coverage_se: (coverage * (1.0 - coverage) / s as f64).sqrt(),
        replications: s,
    }
}

/// Runs the six estimators on `cfg.replications` simulated samples.
///
/// Replication `s` draws from seed `derive(cfg.seed, s)`. Failed
/// replications are dropped when they are fewer than 1% of the total;
/// otherwise the first failure is returned.
pub fn monte_carlo(dgp: &CalibratedDgp, nuisance: &McNuisance, cfg: &McConfig) -> Result<McReport> {
    if cfg.replications == 0 {
        return Err(DmlError::arg("at least one replication is required"));
    }
    if cfg.folds < 2 {
        return Err(DmlError::arg("fold count must be at least 2"));
    }
    let results: Vec<Result<[McEstimate; 6]>> = (0..cfg.replications)
        .into_par_iter()
        .map(|s| replicate(dgp, nuisance, cfg, s))
        .collect();
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed > 0 && (failed as f64) >= 0.01 * cfg.replications as f64 {
        let first = results.into_iter().find_map(|r| r.err()).unwrap();
        return Err(DmlError::numerical(format!(
            "{failed} of {} replications failed; first error: {first}",
            cfg.replications
        )));
    }
    let estimates: Vec<[McEstimate; 6]> = results.into_iter().filter_map(|r| r.ok()).collect();
    let summaries = ESTIMATORS
        .iter()
        .enumerate()
        .map(|(j, &(kind, crossfit))| {
            let col: Vec<McEstimate> = estimates.iter().map(|e| e[j]).collect();
            summarize(
                &estimator_name(kind, crossfit),
                kind,
                crossfit,
                &col,
                dgp.true_ate,
                cfg.mad_about_median,
            )
        })
        .collect();
    Ok(McReport {
        true_ate: dgp.true_ate,
        requested: cfg.replications,
        failed,
        summaries,
        estimates,
    })
}
