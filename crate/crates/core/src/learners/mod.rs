//! Nuisance learners: fitting, prediction, out-of-fold prediction and
//! cross-fitted fit statistics.

mod linear;
mod stacking;
mod tree;

pub use linear::{lasso, lasso_cv, ols, ridge, LinearFit};
pub use stacking::{project_simplex, stack_weights, StackFit};
pub use tree::Tree;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FoldPartition;
use crate::error::{DmlError, Result};
use crate::matrix::Matrix;
use crate::numeric;
use crate::rng;

fn default_penalty() -> f64 {
    1.0
}
fn default_cv_folds() -> usize {
    5
}
fn default_grid() -> usize {
    50
}
fn default_min_node() -> usize {
    5
}
fn default_trees() -> usize {
    1000
}
fn default_mtry() -> f64 {
    1.0 / 3.0
}
fn default_true() -> bool {
    true
}

/// Learner family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Ols,
    /// Penalty on the standardized scale: `||y_c - X_s b||^2 + penalty ||b||^2`.
    Ridge {
        #[serde(default = "default_penalty")]
        penalty: f64,
    },
    /// Fixed `penalty` if given, otherwise chosen by `cv_folds`-fold CV over a
    /// `grid_size`-point geometric grid.
    Lasso {
        #[serde(default)]
        penalty: Option<f64>,
        #[serde(default = "default_cv_folds")]
        cv_folds: usize,
        #[serde(default = "default_grid")]
        grid_size: usize,
    },
    Tree {
        #[serde(default)]
        max_depth: Option<usize>,
        /// Minimum number of observations in each leaf.
        #[serde(default = "default_min_node")]
        min_node_size: usize,
    },
    Forest {
        #[serde(default = "default_trees")]
        n_trees: usize,
        #[serde(default)]
        max_depth: Option<usize>,
        #[serde(default = "default_min_node")]
        min_node_size: usize,
        /// Share of features tried at each split (at least one).
        #[serde(default = "default_mtry")]
        mtry_fraction: f64,
        #[serde(default = "default_true")]
        bootstrap: bool,
    },
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    #[serde(flatten)]
    pub kind: LearnerKind,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        Self { kind, seed: 0 }
    }

    pub fn ols() -> Self {
        Self::new(LearnerKind::Ols)
    }

    pub fn mean() -> Self {
        Self::new(LearnerKind::Mean)
    }

    pub fn tree(max_depth: Option<usize>, min_node_size: usize) -> Self {
        Self::new(LearnerKind::Tree {
            max_depth,
            min_node_size,
        })
    }

    pub fn forest(n_trees: usize, max_depth: Option<usize>, min_node_size: usize) -> Self {
        Self::new(LearnerKind::Forest {
            n_trees,
            max_depth,
            min_node_size,
            mtry_fraction: default_mtry(),
            bootstrap: true,
        })
    }

    /// Outcome forest for the treatment-effect comparisons: 1000 trees, depth 8.
    pub fn outcome_forest() -> Self {
        Self::forest(1000, Some(8), default_min_node())
    }

    /// Propensity forest for the treatment-effect comparisons: 1000 trees, depth 4.
    pub fn propensity_forest() -> Self {
        Self::forest(1000, Some(4), default_min_node())
    }

    /// Forest used for the staggered-adoption panel: 1000 trees, leaves of at least 10.
    pub fn panel_forest() -> Self {
        Self::forest(1000, None, 10)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            LearnerKind::Ols => "ols",
            LearnerKind::Ridge { .. } => "ridge",
            LearnerKind::Lasso { .. } => "lasso",
            LearnerKind::Tree { .. } => "tree",
            LearnerKind::Forest { .. } => "forest",
            LearnerKind::Mean => "mean",
        }
    }

    pub fn check(&self) -> Result<()> {
        match &self.kind {
            LearnerKind::Ridge { penalty } if !(*penalty >= 0.0 && penalty.is_finite()) => {
                Err(DmlError::Config(format!("ridge penalty must be >= 0, got {penalty}")))
            }
            LearnerKind::Lasso {
                penalty,
                cv_folds,
                grid_size,
            } => {
                if let Some(p) = penalty {
                    if !(*p >= 0.0 && p.is_finite()) {
                        return Err(DmlError::Config(format!("lasso penalty must be >= 0, got {p}")));
                    }
                }
                if *cv_folds < 2 || *grid_size < 1 {
                    return Err(DmlError::Config(
                        "lasso needs cv_folds >= 2 and grid_size >= 1".into(),
                    ));
                }
                Ok(())
            }
            LearnerKind::Tree { min_node_size, .. } if *min_node_size < 1 => {
                Err(DmlError::Config("min_node_size must be >= 1".into()))
            }
            LearnerKind::Forest {
                n_trees,
                min_node_size,
                mtry_fraction,
                ..
            } => {
                if *n_trees < 1 {
                    return Err(DmlError::Config("forest needs n_trees >= 1".into()));
                }
                if *min_node_size < 1 {
                    return Err(DmlError::Config("min_node_size must be >= 1".into()));
                }
                if !(*mtry_fraction > 0.0 && *mtry_fraction <= 1.0) {
                    return Err(DmlError::Config(format!(
                        "mtry_fraction must lie in (0, 1], got {mtry_fraction}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// What the learner is asked to predict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Regression,
    /// A 0/1 label, fit by regression and clipped to `[clip, 1 - clip]`.
    Probability { clip: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Model {
    Constant(f64),
    Linear(LinearFit),
    Tree(Tree),
    Forest(Vec<Tree>),
}

/// A fitted learner.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    label: &'static str,
    n_features: usize,
    clip: Option<f64>,
    model: Model,
    /// Penalty picked by cross-validation, when one was.
    pub chosen_penalty: Option<f64>,
}

fn check_inputs(x: &Matrix, y: &[f64], target: Target) -> Result<()> {
    if y.is_empty() {
        return Err(DmlError::arg("cannot fit a learner on empty data"));
    }
    if x.nrows() != y.len() {
        return Err(DmlError::arg(format!(
            "feature matrix has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(DmlError::arg("non-finite value in learner input"));
    }
    if let Target::Probability { clip } = target {
        if !(clip > 0.0 && clip < 0.5) {
            return Err(DmlError::arg(format!("clip must lie in (0, 0.5), got {clip}")));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DmlError::arg("probability target must be 0/1"));
        }
    }
    Ok(())
}

/// Fits `spec` to `(x, y)`.
pub fn fit(spec: &LearnerSpec, x: &Matrix, y: &[f64], target: Target) -> Result<FittedModel> {
    check_inputs(x, y, target)?;
    spec.check()?;
    let p = x.ncols();
    let mut chosen_penalty = None;
    let model = match &spec.kind {
        LearnerKind::Mean => Model::Constant(numeric::mean(y)),
        LearnerKind::Ols => Model::Linear(ols(x, y)?),
        LearnerKind::Ridge { penalty } => Model::Linear(ridge(x, y, *penalty)?),
        LearnerKind::Lasso {
            penalty: Some(l), ..
        } => Model::Linear(lasso(x, y, *l)?),
        LearnerKind::Lasso {
            penalty: None,
            cv_folds,
            grid_size,
        } => {
            if y.len() < 2 {
                Model::Constant(numeric::mean(y))
            } else {
                let (f, l) = lasso_cv(x, y, *cv_folds, *grid_size, spec.seed)?;
                chosen_penalty = Some(l);
                Model::Linear(f)
            }
        }
        LearnerKind::Tree {
            max_depth,
            min_node_size,
        } => Model::Tree(tree::fit_tree(
            x,
            y,
            tree::TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_node_size,
                mtry: usize::MAX,
            },
            spec.seed,
        )),
        LearnerKind::Forest {
            n_trees,
            max_depth,
            min_node_size,
            mtry_fraction,
            bootstrap,
        } => {
            let mtry = ((mtry_fraction * p as f64).ceil() as usize).clamp(1, p.max(1));
            Model::Forest(tree::fit_forest(
                x,
                y,
                tree::TreeParams {
                    max_depth: *max_depth,
                    min_leaf: *min_node_size,
                    mtry: if mtry >= p { usize::MAX } else { mtry },
                },
                *n_trees,
                *bootstrap,
                spec.seed,
            ))
        }
    };
    Ok(FittedModel {
        label: spec.label(),
        n_features: p,
        clip: match target {
            Target::Regression => None,
            Target::Probability { clip } => Some(clip),
        },
        model,
        chosen_penalty,
    })
}

impl FittedModel {
    pub fn label(&self) -> &'static str {
        self.label
    }

    fn raw(&self, row: &[f64]) -> f64 {
        match &self.model {
            Model::Constant(c) => *c,
            Model::Linear(f) => f.predict_row(row),
            Model::Tree(t) => t.predict_row(row),
            Model::Forest(trees) => {
                trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / trees.len() as f64
            }
        }
    }

    /// Predictions and the number that were clipped.
    pub fn predict_counted(&self, x: &Matrix) -> Result<(Vec<f64>, usize)> {
        if x.ncols() != self.n_features {
            return Err(DmlError::arg(format!(
                "model trained on {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        let mut clipped = 0;
        let out = (0..x.nrows())
            .map(|i| {
                let v = self.raw(x.row(i));
                match self.clip {
                    Some(e) if v < e => {
                        clipped += 1;
                        e
                    }
                    Some(e) if v > 1.0 - e => {
                        clipped += 1;
                        1.0 - e
                    }
                    _ => v,
                }
            })
            .collect();
        Ok((out, clipped))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict_counted(x).map(|(v, _)| v)
    }

    /// Linear coefficients, if the model is linear.
    pub fn linear(&self) -> Option<&LinearFit> {
        match &self.model {
            Model::Linear(f) => Some(f),
            _ => None,
        }
    }
}

/// Out-of-fold predictions for one nuisance.
#[derive(Debug, Clone, PartialEq)]
pub struct OofPredictions {
    pub name: String,
    pub values: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    pub clipped: usize,
}

/// For each fold `k`, fits on the rows outside fold `k` that satisfy `subset`
/// and predicts every row of fold `k`.
///
/// The model for fold `k` is seeded with `derive(spec.seed ^ folds.seed, k)`.
pub fn crossfit_predict(
    name: &str,
    spec: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    folds: &FoldPartition,
    subset: Option<&[bool]>,
    target: Target,
) -> Result<OofPredictions> {
    let n = y.len();
    if x.nrows() != n || folds.n() != n {
        return Err(DmlError::arg(format!(
            "crossfit for '{name}': {} feature rows, {n} targets, {} fold assignments",
            x.nrows(),
            folds.n()
        )));
    }
    if let Some(s) = subset {
        if s.len() != n {
            return Err(DmlError::arg("subset mask length mismatch"));
        }
    }
    let per_fold: Vec<Result<(Vec<f64>, usize)>> = (0..folds.k())
        .into_par_iter()
        .map(|k| {
            let train: Vec<usize> = folds
                .complement(k)
                .into_iter()
                .filter(|&i| subset.is_none_or(|s| s[i]))
                .collect();
            if train.len() < 2 {
                return Err(DmlError::validation(format!(
                    "nuisance '{name}': fold {} leaves {} training rows (need at least 2)",
                    k + 1,
                    train.len()
                )));
            }
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let fold_spec = spec
                .clone()
                .with_seed(rng::derive(spec.seed ^ folds.seed(), k as u64));
            let model = fit(&fold_spec, &xt, &yt, target)?;
            model.predict_counted(&x.select_rows(folds.fold(k)))
        })
        .collect();
    let mut values = vec![0.0; n];
    let mut clipped = 0;
    for (k, res) in per_fold.into_iter().enumerate() {
        let (pred, c) = res?;
        for (&i, v) in folds.fold(k).iter().zip(pred) {
            values[i] = v;
        }
        clipped += c;
    }
    Ok(OofPredictions {
        name: name.to_string(),
        values,
        k: folds.k(),
        seed: folds.seed(),
        clipped,
    })
}

/// `1 - SSR/SST`; may be negative.
pub fn crossfit_r2(y: &[f64], pred: &[f64]) -> Result<f64> {
    if y.len() != pred.len() {
        return Err(DmlError::arg("R^2 inputs differ in length"));
    }
    let m = numeric::mean(y);
    let sst = numeric::sum(y.iter().map(|v| (v - m) * (v - m)));
    if sst == 0.0 {
        return Err(DmlError::arg("R^2 undefined for a constant target"));
    }
    let ssr = numeric::sum(y.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)));
    Ok(1.0 - ssr / sst)
}
