//! Cross-fitted estimation: fit nuisances out of fold, solve the averaged
//! linear score for θ, and report sandwich standard errors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_folds, Dataset, FoldPartition};
use crate::error::{DmlError, Result};
use crate::learners::{crossfit_predict, crossfit_r2, fit, LearnerSpec, Target};
use crate::numeric;
use crate::scores::{
    NuisanceDiagnostics, NuisanceSet, NuisanceTask, ScoreComponents, ScoreKind, ScoreProblem,
    ScoreSpec,
};

pub const DEFAULT_CLIP: f64 = 0.01;
pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Produces fitted nuisance values for a score problem, either cross-fitted
/// over `folds` or fit and evaluated on the full sample when `folds` is `None`.
pub trait NuisanceEstimator: Sync {
    fn estimate(&self, problem: &ScoreProblem, folds: Option<&FoldPartition>) -> Result<NuisanceSet>;
}

/// Fixed nuisance values, used as given regardless of the partition.
impl NuisanceEstimator for NuisanceSet {
    fn estimate(&self, problem: &ScoreProblem, _folds: Option<&FoldPartition>) -> Result<NuisanceSet> {
        let mut out = self.clone();
        for (k, v) in &problem.scalars {
            out.scalars.entry(k.clone()).or_insert(*v);
        }
        for t in &problem.tasks {
            let v = out.get(&t.name)?;
            if v.len() != problem.n {
                return Err(DmlError::arg(format!(
                    "nuisance '{}' has {} values for {} observations",
                    t.name,
                    v.len(),
                    problem.n
                )));
            }
        }
        Ok(out)
    }
}

/// Learner choice per nuisance: a default for regression targets, a default
/// for probability targets, and optional per-name overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerMap {
    pub regression: LearnerSpec,
    pub probability: LearnerSpec,
    pub overrides: BTreeMap<String, LearnerSpec>,
    pub clip: f64,
}

impl Default for LearnerMap {
    /// Depth-8 forests for regressions and depth-4 forests for propensities.
    fn default() -> Self {
        Self::new(LearnerSpec::outcome_forest(), LearnerSpec::propensity_forest())
    }
}

impl LearnerMap {
    pub fn uniform(spec: LearnerSpec) -> Self {
        Self {
            regression: spec.clone(),
            probability: spec,
            overrides: BTreeMap::new(),
            clip: DEFAULT_CLIP,
        }
    }

    pub fn new(regression: LearnerSpec, probability: LearnerSpec) -> Self {
        Self {
            regression,
            probability,
            overrides: BTreeMap::new(),
            clip: DEFAULT_CLIP,
        }
    }

    pub fn with(mut self, nuisance: &str, spec: LearnerSpec) -> Self {
        self.overrides.insert(nuisance.to_string(), spec);
        self
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip = clip;
        self
    }

    pub fn spec_for(&self, task: &NuisanceTask) -> &LearnerSpec {
        self.overrides.get(&task.name).unwrap_or(if task.probability {
            &self.probability
        } else {
            &self.regression
        })
    }

    fn target_for(&self, task: &NuisanceTask) -> Target {
        if task.probability {
            Target::Probability { clip: self.clip }
        } else {
            Target::Regression
        }
    }
}

fn subset_r2(task: &NuisanceTask, pred: &[f64]) -> Option<f64> {
    let (y, p): (Vec<f64>, Vec<f64>) = match &task.subset {
        Some(m) => task
            .target
            .iter()
            .zip(pred)
            .zip(m)
            .filter(|(_, &keep)| keep)
            .map(|((&a, &b), _)| (a, b))
            .unzip(),
        None => (task.target.clone(), pred.to_vec()),
    };
    crossfit_r2(&y, &p).ok()
}

impl NuisanceEstimator for LearnerMap {
    fn estimate(&self, problem: &ScoreProblem, folds: Option<&FoldPartition>) -> Result<NuisanceSet> {
        let mut out = NuisanceSet {
            scalars: problem.scalars.clone(),
            ..NuisanceSet::default()
        };
        for task in &problem.tasks {
            let spec = self.spec_for(task);
            let target = self.target_for(task);
            let (values, clipped) = match folds {
                Some(f) => {
                    let oof = crossfit_predict(
                        &task.name,
                        spec,
                        &task.features,
                        &task.target,
                        f,
                        task.subset.as_deref(),
                        target,
                    )?;
                    (oof.values, oof.clipped)
                }
                None => {
                    let rows: Vec<usize> = (0..problem.n)
                        .filter(|&i| task.subset.as_ref().is_none_or(|m| m[i]))
                        .collect();
                    if rows.len() < 2 {
                        return Err(DmlError::validation(format!(
                            "nuisance '{}' has {} training rows (need at least 2)",
                            task.name,
                            rows.len()
                        )));
                    }
                    let y: Vec<f64> = rows.iter().map(|&i| task.target[i]).collect();
                    let model = fit(spec, &task.features.select_rows(&rows), &y, target)?;
                    model.predict_counted(&task.features)?
                }
            };
            out.diagnostics.insert(
                task.name.clone(),
                NuisanceDiagnostics {
                    learner: spec.label().to_string(),
                    r2: subset_r2(task, &values),
                    clipped,
                },
            );
            out.values.insert(task.name.clone(), values);
        }
        Ok(out)
    }
}

/// Result of one estimation run.
#[derive(Debug, Clone, Serialize)]
pub struct DmlFit {
    pub score: ScoreKind,
    pub theta: f64,
    pub j_hat: f64,
    pub sigma: f64,
    pub se: f64,
    pub ci: [f64; 2],
    pub alpha: f64,
    pub n: usize,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub crossfit: bool,
    pub weak_identification: bool,
    pub diagnostics: BTreeMap<String, NuisanceDiagnostics>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub psi: Vec<f64>,
    #[serde(skip)]
    pub components: ScoreComponents,
    #[serde(skip)]
    pub folds: Option<FoldPartition>,
}

impl DmlFit {
    /// Standard error with the `n / (n - 1)` small-sample factor applied.
    pub fn se_dof(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.se * (self.n as f64 / (self.n - 1) as f64).sqrt()
    }
}

/// `sum(psi_b) / sum(psi_a)`.
pub fn solve_theta(c: &ScoreComponents) -> Result<f64> {
    let n = c.n();
    if n == 0 {
        return Err(DmlError::arg("empty score"));
    }
    let sa = numeric::sum(c.psi_a.iter().copied());
    if sa.is_nan() || sa.abs() < 1e-12 * n as f64 {
        return Err(DmlError::ident(format!(
            "sum of psi_a is {sa:e}; the moment equation does not identify theta"
        )));
    }
    Ok(numeric::sum(c.psi_b.iter().copied()) / sa)
}

/// `J = -mean(psi_a)` and `Sigma = J^-1 mean(psi^2) J^-1` at `theta`.
pub fn sandwich_variance(c: &ScoreComponents, theta: f64) -> Result<(f64, f64)> {
    let j = -numeric::mean(&c.psi_a);
    if j == 0.0 || !j.is_finite() {
        return Err(DmlError::ident("score Jacobian is singular"));
    }
    let psi = c.psi(theta);
    let omega = numeric::mean(&psi.iter().map(|v| v * v).collect::<Vec<_>>());
    Ok((j, omega / (j * j)))
}

/// Two-sided normal quantile `z_{1 - alpha/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DmlError::arg(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(numeric::inverse_normal_cdf(1.0 - alpha / 2.0))
}

pub fn confidence_interval(theta: f64, sigma: f64, n: usize, alpha: f64) -> Result<[f64; 2]> {
    let z = critical_value(alpha)?;
    let half = z * (sigma / n as f64).sqrt();
    Ok([theta - half, theta + half])
}

/// Solves the score, computes the sandwich variance and interval, and
/// assembles a fit record.
pub fn fit_components(
    kind: ScoreKind,
    components: ScoreComponents,
    alpha: f64,
) -> Result<DmlFit> {
    let n = components.n();
    let theta = solve_theta(&components)?;
    let (j_hat, sigma) = sandwich_variance(&components, theta)?;
    let ci = confidence_interval(theta, sigma, n, alpha)?;
    let psi = components.psi(theta);
    let ma = numeric::mean(&components.psi_a);
    let se_a = numeric::sd(&components.psi_a) / (n as f64).sqrt();
    let weak_identification = ma.abs() < 5.0 * se_a;
    let mut warnings = components.warnings.clone();
    if weak_identification {
        warnings.push(format!(
            "weak identification: mean psi_a = {ma:e} is within 5 standard errors ({se_a:e}) of zero"
        ));
    }
    Ok(DmlFit {
        score: kind,
        theta,
        j_hat,
        sigma,
        se: (sigma / n as f64).sqrt(),
        ci,
        alpha,
        n,
        k: None,
        seed: None,
        crossfit: false,
        weak_identification,
        diagnostics: BTreeMap::new(),
        warnings,
        psi,
        components,
        folds: None,
    })
}

/// Evaluates the score at already-fitted nuisances and solves it.
pub fn fit_from_nuisances(problem: &ScoreProblem, eta: &NuisanceSet, alpha: f64) -> Result<DmlFit> {
    let c = problem.components(eta)?;
    let mut f = fit_components(problem.kind(), c, alpha)?;
    f.diagnostics = eta.diagnostics.clone();
    Ok(f)
}

/// Cross-fitted estimate on an already laid-out problem. Folds are drawn
/// over the problem's observations, which for panel scores are units.
pub fn dml_fit_problem(
    problem: &ScoreProblem,
    est: &dyn NuisanceEstimator,
    k: usize,
    seed: u64,
    alpha: f64,
) -> Result<DmlFit> {
    critical_value(alpha)?;
    let folds = make_folds(problem.n, k, seed)?;
    dml_fit_with_folds(problem, est, folds, alpha)
}

pub fn dml_fit_with_folds(
    problem: &ScoreProblem,
    est: &dyn NuisanceEstimator,
    folds: FoldPartition,
    alpha: f64,
) -> Result<DmlFit> {
    if folds.n() != problem.n {
        return Err(DmlError::arg(format!(
            "partition covers {} observations, score has {}",
            folds.n(),
            problem.n
        )));
    }
    let eta = est.estimate(problem, Some(&folds))?;
    let mut f = fit_from_nuisances(problem, &eta, alpha)?;
    f.k = Some(folds.k());
    f.seed = Some(folds.seed());
    f.crossfit = true;
    f.folds = Some(folds);
    Ok(f)
}

/// Cross-fitted estimate of the score `spec` on `ds`.
pub fn dml_fit(
    ds: &Dataset,
    spec: &ScoreSpec,
    est: &dyn NuisanceEstimator,
    k: usize,
    seed: u64,
    alpha: f64,
) -> Result<DmlFit> {
    if k < 2 {
        return Err(DmlError::arg(format!("fold count must be at least 2, got {k}")));
    }
    let problem = ScoreProblem::new(ds, spec)?;
    dml_fit_problem(&problem, est, k, seed, alpha)
}

/// Nuisances fit once on the whole sample and evaluated in-sample.
pub fn full_sample_fit_problem(
    problem: &ScoreProblem,
    est: &dyn NuisanceEstimator,
    alpha: f64,
) -> Result<DmlFit> {
    critical_value(alpha)?;
    let eta = est.estimate(problem, None)?;
    fit_from_nuisances(problem, &eta, alpha)
}

pub fn full_sample_fit(
    ds: &Dataset,
    spec: &ScoreSpec,
    est: &dyn NuisanceEstimator,
    alpha: f64,
) -> Result<DmlFit> {
    let problem = ScoreProblem::new(ds, spec)?;
    full_sample_fit_problem(&problem, est, alpha)
}

/// One cross-fitted run per seed, returned in seed order.
pub fn repeat_fit_problem(
    problem: &ScoreProblem,
    est: &dyn NuisanceEstimator,
    k: usize,
    seeds: &[u64],
    alpha: f64,
) -> Result<Vec<DmlFit>> {
    seeds
        .par_iter()
        .map(|&s| dml_fit_problem(problem, est, k, s, alpha))
        .collect()
}

pub fn repeat_fit(
    ds: &Dataset,
    spec: &ScoreSpec,
    est: &dyn NuisanceEstimator,
    k: usize,
    seeds: &[u64],
    alpha: f64,
) -> Result<Vec<DmlFit>> {
    if seeds.is_empty() {
        return Err(DmlError::arg("at least one seed is required"));
    }
    let problem = ScoreProblem::new(ds, spec)?;
    repeat_fit_problem(&problem, est, k, seeds, alpha)
}

/// Repetition seeds derived from a master seed.
pub fn repetition_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|s| crate::rng::derive(master, s)).collect()
}
