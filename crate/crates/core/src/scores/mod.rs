//! Linear-in-θ moment functions `psi = psi_b - psi_a * theta`, the nuisance
//! regressions each one needs, and an orthogonality checker.

mod adjust;
mod orthogonality;
mod panel;
mod regression;
mod treatment;

pub use adjust::{orthogonalize, AdjustmentSpec, Correction};
pub use orthogonality::{check_orthogonality, default_perturbations, OrthogonalityReport};
pub use panel::{fe_plr_components, gtatt_components};
pub use regression::{pliv_components, pliv_flex_components, plr_components};
pub use treatment::{
    ate_alpha, ate_dr_components, ate_ipw_components, ate_ra_components, att_dr_components,
    late_dr_components, wapo_components,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{build_panel, validate, Dataset, PanelDataset};
use crate::error::{DmlError, Result};
use crate::matrix::Matrix;
use crate::numeric;

/// Frozen external names of the score catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AteDr,
    AteIpw,
    AteRa,
    Wapo,
    AttDr,
    LateDr,
    Plr,
    Pliv,
    PlivFlex,
    FePlr,
    #[serde(rename = "gtatt")]
    GtAtt,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 11] = [
        ScoreKind::AteDr,
        ScoreKind::AteIpw,
        ScoreKind::AteRa,
        ScoreKind::Wapo,
        ScoreKind::AttDr,
        ScoreKind::LateDr,
        ScoreKind::Plr,
        ScoreKind::Pliv,
        ScoreKind::PlivFlex,
        ScoreKind::FePlr,
        ScoreKind::GtAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::AteDr => "ate_dr",
            ScoreKind::AteIpw => "ate_ipw",
            ScoreKind::AteRa => "ate_ra",
            ScoreKind::Wapo => "wapo",
            ScoreKind::AttDr => "att_dr",
            ScoreKind::LateDr => "late_dr",
            ScoreKind::Plr => "plr",
            ScoreKind::Pliv => "pliv",
            ScoreKind::PlivFlex => "pliv_flex",
            ScoreKind::FePlr => "fe_plr",
            ScoreKind::GtAtt => "gtatt",
        }
    }

    /// False for the two deliberately non-orthogonal ATE scores.
    pub fn is_orthogonal(self) -> bool {
        !matches!(self, ScoreKind::AteIpw | ScoreKind::AteRa)
    }

    pub fn is_panel(self) -> bool {
        matches!(self, ScoreKind::FePlr | ScoreKind::GtAtt)
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = DmlError;
    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| DmlError::Config(format!("unknown score kind '{s}'")))
    }
}

/// Weighting function for the weighted average potential outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Constant(f64),
    /// Read per observation from a data column.
    Column(String),
}

impl Default for Weight {
    fn default() -> Self {
        Weight::Constant(1.0)
    }
}

fn default_level() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub kind: ScoreKind,
    /// Treatment level for `wapo`.
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub weight: Weight,
    /// Cohort for a single `gtatt` fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<f64>,
    /// Period for a single `gtatt` fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

impl ScoreSpec {
    pub fn new(kind: ScoreKind) -> Self {
        Self {
            kind,
            level: 1.0,
            weight: Weight::default(),
            group: None,
            time: None,
        }
    }
}

/// Per-observation components of a linear score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreComponents {
    pub psi_a: Vec<f64>,
    pub psi_b: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ScoreComponents {
    pub fn new(psi_a: Vec<f64>, psi_b: Vec<f64>) -> Self {
        assert_eq!(psi_a.len(), psi_b.len(), "score component length mismatch");
        Self {
            psi_a,
            psi_b,
            warnings: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.psi_b.len()
    }

    /// `psi_b - psi_a * theta` per observation.
    pub fn psi(&self, theta: f64) -> Vec<f64> {
        self.psi_b
            .iter()
            .zip(&self.psi_a)
            .map(|(b, a)| b - a * theta)
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        let bad = self
            .psi_a
            .iter()
            .chain(&self.psi_b)
            .position(|v| !v.is_finite());
        match bad {
            Some(i) => Err(DmlError::numerical(format!(
                "non-finite score value at observation {}",
                i % self.n().max(1) + 1
            ))),
            None => Ok(()),
        }
    }
}

/// One conditional-expectation nuisance: regress `target` on `features`
/// using the rows in `subset` (all rows if `None`), predict for every row.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceTask {
    pub name: String,
    pub target: Vec<f64>,
    pub features: Matrix,
    pub subset: Option<Vec<bool>>,
    pub probability: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NuisanceDiagnostics {
    pub learner: String,
    /// Out-of-sample (or in-sample, without cross-fitting) R^2 on the task's subset.
    pub r2: Option<f64>,
    pub clipped: usize,
}

/// Fitted nuisance values, one vector per task name, plus full-sample scalars.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NuisanceSet {
    pub values: BTreeMap<String, Vec<f64>>,
    pub scalars: BTreeMap<String, f64>,
    pub diagnostics: BTreeMap<String, NuisanceDiagnostics>,
}

impl NuisanceSet {
    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.values
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| DmlError::arg(format!("nuisance '{name}' missing")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| DmlError::arg(format!("scalar nuisance '{name}' missing")))
    }

    pub fn insert(&mut self, name: &str, values: Vec<f64>) {
        self.values.insert(name.to_string(), values);
    }

    /// A copy with `values[k] += lambda * delta[k]` for every perturbed name.
    pub fn perturbed(&self, delta: &BTreeMap<String, Vec<f64>>, lambda: f64) -> Result<Self> {
        let mut out = self.clone();
        for (k, dv) in delta {
            let v = out
                .values
                .get_mut(k)
                .ok_or_else(|| DmlError::arg(format!("perturbation for unknown nuisance '{k}'")))?;
            if v.len() != dv.len() {
                return Err(DmlError::arg(format!("perturbation for '{k}' has wrong length")));
            }
            for (a, b) in v.iter_mut().zip(dv) {
                *a += lambda * b;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Inputs {
    Cross {
        y: Vec<f64>,
        d: Vec<f64>,
        z: Vec<f64>,
        omega: Vec<f64>,
        level: f64,
    },
    Fe {
        dy: Matrix,
        dd: Matrix,
        dz: Option<Matrix>,
    },
    Gt {
        dy: Vec<f64>,
        cohort: Vec<f64>,
        comparison: Vec<f64>,
    },
}

/// A score bound to a sample: the nuisance tasks to fit and everything else
/// needed to turn fitted nuisances into score components.
///
/// Panel scores work at the unit level, so `n` counts units and folds must be
/// drawn over units.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreProblem {
    pub spec: ScoreSpec,
    pub n: usize,
    pub tasks: Vec<NuisanceTask>,
    pub scalars: BTreeMap<String, f64>,
    inputs: Inputs,
}

fn mask(v: &[f64], level: f64) -> Vec<bool> {
    v.iter().map(|&x| x == level).collect()
}

fn indicator(v: &[f64], level: f64) -> Vec<f64> {
    v.iter().map(|&x| f64::from(u8::from(x == level))).collect()
}

fn task(name: &str, target: &[f64], x: &Matrix, subset: Option<Vec<bool>>, prob: bool) -> NuisanceTask {
    NuisanceTask {
        name: name.to_string(),
        target: target.to_vec(),
        features: x.clone(),
        subset,
        probability: prob,
    }
}

impl ScoreProblem {
    /// Validates `ds` for the score and lays out its nuisance tasks.
    pub fn new(ds: &Dataset, spec: &ScoreSpec) -> Result<Self> {
        validate(ds, spec.kind)?;
        match spec.kind {
            ScoreKind::FePlr => return Self::fe_plr(&build_panel(ds)?),
            ScoreKind::GtAtt => {
                let (g, t) = spec.group.zip(spec.time).ok_or_else(|| {
                    DmlError::Config("gtatt needs both 'group' and 'time'".into())
                })?;
                return Self::gtatt(&build_panel(ds)?, g, t);
            }
            _ => {}
        }
        let n = ds.n();
        let x = ds.controls();
        let y = ds.outcome()?.to_vec();
        let d = ds.treatment()?.to_vec();
        let z = if ds.schema().instrument.is_some() {
            ds.instrument()?.to_vec()
        } else {
            Vec::new()
        };
        let omega = match &spec.weight {
            Weight::Constant(c) => vec![*c; n],
            Weight::Column(col) => ds
                .column(col)
                .ok_or_else(|| DmlError::Schema(format!("weight column '{col}' not found")))?
                .to_vec(),
        };
        let mut scalars = BTreeMap::new();
        let tasks = match spec.kind {
            ScoreKind::AteDr => vec![
                task("r", &d, &x, None, true),
                task("l0", &y, &x, Some(mask(&d, 0.0)), false),
                task("l1", &y, &x, Some(mask(&d, 1.0)), false),
            ],
            ScoreKind::AteIpw => vec![task("r", &d, &x, None, true)],
            ScoreKind::AteRa => vec![
                task("l0", &y, &x, Some(mask(&d, 0.0)), false),
                task("l1", &y, &x, Some(mask(&d, 1.0)), false),
            ],
            ScoreKind::Wapo => {
                if !d.contains(&spec.level) {
                    return Err(DmlError::validation(format!(
                        "no observations at treatment level {}",
                        spec.level
                    )));
                }
                vec![
                    task("rd", &indicator(&d, spec.level), &x, None, true),
                    task("ld", &y, &x, Some(mask(&d, spec.level)), false),
                ]
            }
            ScoreKind::AttDr => {
                let p = numeric::mean(&d);
                if p <= 0.0 {
                    return Err(DmlError::ident("no treated observations"));
                }
                scalars.insert("p".to_string(), p);
                vec![
                    task("r", &d, &x, None, true),
                    task("l0", &y, &x, Some(mask(&d, 0.0)), false),
                ]
            }
            ScoreKind::LateDr => vec![
                task("rz", &z, &x, None, true),
                task("mu0", &y, &x, Some(mask(&z, 0.0)), false),
                task("mu1", &y, &x, Some(mask(&z, 1.0)), false),
                task("nu0", &d, &x, Some(mask(&z, 0.0)), false),
                task("nu1", &d, &x, Some(mask(&z, 1.0)), false),
            ],
            ScoreKind::Plr => vec![
                task("l", &y, &x, None, false),
                task("r", &d, &x, None, false),
            ],
            ScoreKind::Pliv => vec![
                task("l", &y, &x, None, false),
                task("r", &d, &x, None, false),
                task("rz", &z, &x, None, false),
            ],
            ScoreKind::PlivFlex => {
                let zx = Matrix::from_columns(n, &[&z]).hstack(&x);
                vec![
                    task("l", &y, &x, None, false),
                    task("r", &d, &x, None, false),
                    task("m", &d, &zx, None, false),
                ]
            }
            ScoreKind::FePlr | ScoreKind::GtAtt => unreachable!(),
        };
        Ok(Self {
            spec: spec.clone(),
            n,
            tasks,
            scalars,
            inputs: Inputs::Cross {
                y,
                d,
                z,
                omega,
                level: spec.level,
            },
        })
    }

    /// First-differenced fixed-effects score. Per period `t >= 1` the
    /// differences of Y, D (and Z, when an instrument is given) are
    /// regressed on `(X_t, X_{t-1})`.
    pub fn fe_plr(panel: &PanelDataset) -> Result<Self> {
        let tt = panel.n_periods();
        if tt < 2 {
            return Err(DmlError::validation(
                "fixed-effects score needs at least two periods",
            ));
        }
        let schema = panel.base().schema();
        let y_col = schema.outcome.clone().unwrap();
        let d_col = schema
            .treatment
            .clone()
            .ok_or_else(|| DmlError::validation("role treatment required"))?;
        let dy = panel.first_differences(&y_col)?;
        let dd = panel.first_differences(&d_col)?;
        let dz = match &schema.instrument {
            Some(z) => Some(panel.first_differences(z)?),
            None => None,
        };
        let mut tasks = Vec::new();
        for t in 1..tt {
            let x = panel.controls_at(t).hstack(&panel.controls_at(t - 1));
            tasks.push(task(&format!("dy_{t}"), &dy.column(t - 1), &x, None, false));
            tasks.push(task(&format!("dd_{t}"), &dd.column(t - 1), &x, None, false));
            if let Some(dz) = &dz {
                tasks.push(task(&format!("dz_{t}"), &dz.column(t - 1), &x, None, false));
            }
        }
        Ok(Self {
            spec: ScoreSpec::new(ScoreKind::FePlr),
            n: panel.n_units(),
            tasks,
            scalars: BTreeMap::new(),
            inputs: Inputs::Fe { dy, dd, dz },
        })
    }

    /// Group-time ATT for cohort `g` at period `t` (period values, not indices).
    ///
    /// The outcome change is `Y_t - Y_{g-1}` for `t >= g` and `Y_t - Y_{t-1}`
    /// before treatment, where `g-1` is the period preceding `g`. Comparison
    /// units have first-treatment period after `t` (never-treated included)
    /// and are not in cohort `g`. Covariates are taken at the first period.
    pub fn gtatt(panel: &PanelDataset, g: f64, t: f64) -> Result<Self> {
        let periods = panel.periods();
        let gi = periods
            .iter()
            .position(|&p| p == g)
            .ok_or_else(|| DmlError::validation(format!("group {g} is not an observed period")))?;
        let ti = periods
            .iter()
            .position(|&p| p == t)
            .ok_or_else(|| DmlError::validation(format!("time {t} is not an observed period")))?;
        let base = if ti >= gi { gi } else { ti };
        if base == 0 {
            return Err(DmlError::ident(format!(
                "ATT({g},{t}) needs a period before {}",
                periods[base]
            )));
        }
        let y_col = panel.base().schema().outcome.clone().unwrap();
        let wide = panel.wide(&y_col)?;
        let groups = panel.groups()?;
        let n = panel.n_units();
        let dy: Vec<f64> = (0..n).map(|u| wide.get(u, ti) - wide.get(u, base - 1)).collect();
        let cohort: Vec<f64> = groups.iter().map(|&gv| f64::from(u8::from(gv == g))).collect();
        let comparison: Vec<f64> = groups
            .iter()
            .map(|&gv| f64::from(u8::from(gv > t && gv != g)))
            .collect();
        let n_cohort = cohort.iter().filter(|&&c| c == 1.0).count();
        let n_comp = comparison.iter().filter(|&&c| c == 1.0).count();
        if n_cohort == 0 {
            return Err(DmlError::ident(format!("no units first treated at {g}")));
        }
        if n_comp == 0 {
            return Err(DmlError::ident(format!("no comparison units with group > {t}")));
        }
        let x = panel.controls_at(0);
        let comp_mask: Vec<bool> = comparison.iter().map(|&c| c == 1.0).collect();
        let tasks = vec![
            task("h0", &comparison, &x, None, true),
            task("h1", &cohort, &x, None, true),
            task("l0", &dy, &x, Some(comp_mask), false),
        ];
        let mut scalars = BTreeMap::new();
        scalars.insert("p".to_string(), n_cohort as f64 / n as f64);
        let mut spec = ScoreSpec::new(ScoreKind::GtAtt);
        spec.group = Some(g);
        spec.time = Some(t);
        Ok(Self {
            spec,
            n,
            tasks,
            scalars,
            inputs: Inputs::Gt {
                dy,
                cohort,
                comparison,
            },
        })
    }

    pub fn kind(&self) -> ScoreKind {
        self.spec.kind
    }

    pub fn task(&self, name: &str) -> Option<&NuisanceTask> {
        self.tasks.iter().find(|t| t.name == name)
    }

    /// Outcome-like vector for a panel or cross-section problem; used for
    /// scale statistics.
    pub fn outcome(&self) -> Vec<f64> {
        match &self.inputs {
            Inputs::Cross { y, .. } => y.clone(),
            Inputs::Fe { dy, .. } => (0..dy.nrows()).map(|i| dy.row(i).iter().sum()).collect(),
            Inputs::Gt { dy, .. } => dy.clone(),
        }
    }

    /// Evaluates the score components at fitted nuisances `eta`.
    pub fn components(&self, eta: &NuisanceSet) -> Result<ScoreComponents> {
        let alpha_or = |d: &[f64]| -> Result<Vec<f64>> {
            match eta.values.get("alpha") {
                Some(a) => Ok(a.clone()),
                None => ate_alpha(d, eta.get("r")?),
            }
        };
        let c = match (&self.inputs, self.kind()) {
            (Inputs::Cross { y, d, .. }, ScoreKind::AteDr) => {
                ate_dr_components(y, d, &alpha_or(d)?, eta.get("l0")?, eta.get("l1")?)
            }
            (Inputs::Cross { y, d, .. }, ScoreKind::AteIpw) => {
                ate_ipw_components(y, &alpha_or(d)?)
            }
            (Inputs::Cross { .. }, ScoreKind::AteRa) => {
                ate_ra_components(eta.get("l0")?, eta.get("l1")?)
            }
            (
                Inputs::Cross {
                    y, d, omega, level, ..
                },
                ScoreKind::Wapo,
            ) => wapo_components(y, d, *level, omega, eta.get("rd")?, eta.get("ld")?)?,
            (Inputs::Cross { y, d, .. }, ScoreKind::AttDr) => {
                let p = eta.scalars.get("p").copied().unwrap_or(self.scalars["p"]);
                att_dr_components(y, d, eta.get("r")?, eta.get("l0")?, p)?
            }
            (Inputs::Cross { y, d, z, .. }, ScoreKind::LateDr) => late_dr_components(
                y,
                d,
                z,
                eta.get("rz")?,
                eta.get("mu0")?,
                eta.get("mu1")?,
                eta.get("nu0")?,
                eta.get("nu1")?,
            )?,
            (Inputs::Cross { y, d, .. }, ScoreKind::Plr) => {
                plr_components(y, d, eta.get("l")?, eta.get("r")?)?
            }
            (Inputs::Cross { y, d, z, .. }, ScoreKind::Pliv) => {
                pliv_components(y, d, z, eta.get("l")?, eta.get("r")?, eta.get("rz")?)
            }
            (Inputs::Cross { y, d, .. }, ScoreKind::PlivFlex) => {
                pliv_flex_components(y, d, eta.get("l")?, eta.get("r")?, eta.get("m")?)
            }
            (Inputs::Fe { dy, dd, dz }, ScoreKind::FePlr) => {
                let tt = dy.ncols();
                let gather = |prefix: &str| -> Result<Matrix> {
                    let cols: Vec<&[f64]> = (1..=tt)
                        .map(|t| eta.get(&format!("{prefix}_{t}")))
                        .collect::<Result<_>>()?;
                    Ok(Matrix::from_columns(dy.nrows(), &cols))
                };
                let gy = gather("dy")?;
                let gd = gather("dd")?;
                match dz {
                    Some(dz) => fe_plr_components(dy, dd, dz, &gy, &gd, &gather("dz")?)?,
                    None => fe_plr_components(dy, dd, dd, &gy, &gd, &gd)?,
                }
            }
            (
                Inputs::Gt {
                    dy,
                    cohort,
                    comparison,
                },
                ScoreKind::GtAtt,
            ) => {
                let p = eta.scalars.get("p").copied().unwrap_or(self.scalars["p"]);
                gtatt_components(
                    dy,
                    cohort,
                    comparison,
                    eta.get("h0")?,
                    eta.get("h1")?,
                    eta.get("l0")?,
                    p,
                )?
            }
            _ => unreachable!("inputs always match the score kind"),
        };
        c.check_finite()?;
        Ok(c)
    }
}

/// Every `(g, t)` pair with a cohort, a usable base period and comparison
/// units, ordered by group then time.
pub fn identified_pairs(panel: &PanelDataset) -> Result<Vec<(f64, f64)>> {
    let periods = panel.periods();
    let groups = panel.groups()?;
    let mut cohorts: Vec<f64> = groups.iter().copied().filter(|g| g.is_finite()).collect();
    cohorts.sort_by(f64::total_cmp);
    cohorts.dedup();
    let mut out = Vec::new();
    for &g in &cohorts {
        let Some(gi) = periods.iter().position(|&p| p == g) else {
            continue;
        };
        if gi == 0 {
            continue;
        }
        for &t in &periods[1..] {
            if groups.iter().any(|&gv| gv > t && gv != g) {
                out.push((g, t));
            }
        }
    }
    Ok(out)
}
