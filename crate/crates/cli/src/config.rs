use std::path::{Path, PathBuf};

use dmlkit::engine::{LearnerMap, DEFAULT_ALPHA, DEFAULT_FOLDS};
use dmlkit::learners::LearnerSpec;
use dmlkit::scores::{ScoreKind, ScoreSpec};
use dmlkit::simulation::McConfig;
use dmlkit::{DmlError, Result, Schema};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    pub schema: Schema,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// Learners compared nuisance by nuisance.
    pub candidates: Vec<LearnerSpec>,
    /// Perturbation sizes for the orthogonality check, symmetric about 0.
    pub lambdas: Vec<f64>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            candidates: vec![
                LearnerSpec::mean(),
                LearnerSpec::ols(),
                LearnerSpec::new(dmlkit::LearnerKind::Lasso {
                    penalty: None,
                    cv_folds: 5,
                    grid_size: 50,
                }),
                LearnerSpec::forest(200, None, 5),
            ],
            lambdas: vec![-0.2, -0.1, -0.05, 0.05, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Seed sample; the built-in nonlinear design is used when absent.
    pub seed_data: Option<DataConfig>,
    /// Rows of the built-in seed design.
    pub seed_rows: usize,
    pub calibration_outcome: LearnerSpec,
    pub calibration_propensity: LearnerSpec,
    pub learners: LearnerMap,
    pub monte_carlo: McConfig,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed_data: None,
            seed_rows: 2000,
            calibration_outcome: LearnerSpec::forest(1000, None, 10),
            calibration_propensity: LearnerSpec::forest(1000, None, 10),
            learners: LearnerMap::default(),
            monte_carlo: McConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub score: ScoreSpec,
    /// Learner per nuisance; `overrides` keys are nuisance names such as
    /// `l`, `r`, `l0`, `rz` or `dy_1`.
    pub learners: LearnerMap,
    pub folds: usize,
    /// Partition seeds, one per repetition. Derived from `master_seed` when absent.
    pub seeds: Option<Vec<u64>>,
    pub master_seed: u64,
    pub repetitions: usize,
    pub alpha: f64,
    /// Also report standard errors scaled by `sqrt(n / (n - 1))`.
    pub dof_correction: bool,
    /// Ignore covariances between group-time scores in event-time aggregates.
    pub independent_dynamic: bool,
    /// Write per-observation score values of the first repetition.
    pub psi_dump: bool,
    pub output: PathBuf,
    pub diagnose: DiagnoseConfig,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            score: ScoreSpec::new(ScoreKind::Plr),
            learners: LearnerMap::default(),
            folds: DEFAULT_FOLDS,
            seeds: None,
            master_seed: 20240917,
            repetitions: 5,
            alpha: DEFAULT_ALPHA,
            dof_correction: false,
            independent_dynamic: false,
            psi_dump: false,
            output: PathBuf::from("dmlkit_out"),
            diagnose: DiagnoseConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> DmlError {
    DmlError::Config(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in [cfg.data.as_mut(), cfg.simulation.seed_data.as_mut()].into_iter().flatten() {
            if d.path.is_relative() {
                d.path = base.join(&d.path);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(config_err(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.learners.clip > 0.0 && self.learners.clip < 0.5) {
            return Err(config_err("clip must lie in (0, 0.5)"));
        }
        match &self.seeds {
            Some(s) if s.is_empty() => return Err(config_err("seeds must not be empty")),
            None if self.repetitions == 0 => {
                return Err(config_err("repetitions must be at least 1"))
            }
            _ => {}
        }
        for spec in [&self.learners.regression, &self.learners.probability]
            .into_iter()
            .chain(self.learners.overrides.values())
        {
            spec.check().map_err(|e| config_err(e.to_string()))?;
        }
        if let Some(d) = &self.data {
            if !d.path.exists() {
                return Err(config_err(format!("data file {} does not exist", d.path.display())));
            }
        }
        Ok(())
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .ok_or_else(|| config_err("this command needs a 'data' section"))
    }

    pub fn seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => dmlkit::engine::repetition_seeds(self.master_seed, self.repetitions),
        }
    }
}
