use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use dmlkit::aggregation::{event_study, median_aggregate};
use dmlkit::data::{build_panel, load_csv_with, make_folds, Dataset};
use dmlkit::demo;
use dmlkit::engine::{dml_fit_problem, repeat_fit_problem, NuisanceEstimator};
use dmlkit::learners::{crossfit_predict, crossfit_r2, stack_weights, Target};
use dmlkit::report::{self, write_json};
use dmlkit::scores::{check_orthogonality, default_perturbations, ScoreKind, ScoreProblem, Weight};
use dmlkit::simulation::{calibrate_dgp, monte_carlo, McNuisance};
use dmlkit::{DmlError, Result};
use serde_json::json;

use crate::config::{DataConfig, RunConfig};

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.clone())
}

fn load(data: &DataConfig, cfg: &RunConfig) -> Result<Dataset> {
    let extra: Vec<String> = match &cfg.score.weight {
        Weight::Column(c) => vec![c.clone()],
        Weight::Constant(_) => Vec::new(),
    };
    load_csv_with(&data.path, &data.schema, &extra)
}

pub fn estimate(cfg: &RunConfig) -> Result<()> {
    cfg.check()?;
    if cfg.score.kind == ScoreKind::GtAtt && (cfg.score.group.is_none() || cfg.score.time.is_none()) {
        return Err(DmlError::Config(
            "gtatt in 'estimate' needs score.group and score.time; use 'attgt' for all pairs".into(),
        ));
    }
    let ds = load(cfg.data()?, cfg)?;
    let problem = ScoreProblem::new(&ds, &cfg.score)?;
    let seeds = cfg.seeds();
    let fits = repeat_fit_problem(&problem, &cfg.learners, cfg.folds, &seeds, cfg.alpha)?;
    let agg = median_aggregate(&fits)?;
    let dir = out_dir(cfg)?;

    let mut result = json!({
        "score": cfg.score.kind,
        "theta": agg.theta,
        "se": agg.se,
        "ci": agg.ci,
        "n": problem.n,
        "K": cfg.folds,
        "seed": cfg.master_seed,
        "seeds": seeds,
        "alpha": cfg.alpha,
        "diagnostics": fits[0].diagnostics,
        "weak_identification": fits.iter().any(|f| f.weak_identification),
        "warnings": fits[0].warnings,
        "per_rep": fits,
    });
    if cfg.dof_correction {
        let n = problem.n as f64;
        result["se_dof"] = json!(agg.se * (n / (n - 1.0)).sqrt());
    }
    write_json(dir.join("results.json"), &result)?;
    report::per_rep_table(&fits).write(dir.join("per_rep.csv"))?;
    if cfg.psi_dump {
        report::psi_table(&fits[0]).write(dir.join("psi_dump.csv"))?;
    }
    println!(
        "{}: theta = {:.6} (se {:.6}), {:.0}% CI [{:.6}, {:.6}], n = {}, {} repetition(s)",
        cfg.score.kind,
        agg.theta,
        agg.se,
        100.0 * (1.0 - cfg.alpha),
        agg.ci[0],
        agg.ci[1],
        problem.n,
        fits.len()
    );
    for w in &fits[0].warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn attgt(cfg: &RunConfig) -> Result<()> {
    cfg.check()?;
    let ds = load(cfg.data()?, cfg)?;
    dmlkit::validate(&ds, ScoreKind::GtAtt)?;
    let panel = build_panel(&ds)?;
    let seeds = cfg.seeds();
    let study = event_study(
        &panel,
        &cfg.learners,
        cfg.folds,
        &seeds,
        cfg.alpha,
        cfg.independent_dynamic,
    )?;
    let dir = out_dir(cfg)?;
    report::attgt_table(&study.pairs).write(dir.join("attgt.csv"))?;
    report::event_study_table(&study.dynamic).write(dir.join("event_study.csv"))?;
    let pairs: Vec<_> = study
        .pairs
        .iter()
        .map(|(g, t, a)| json!({"group": g, "time": t, "aggregate": a}))
        .collect();
    write_json(
        dir.join("results.json"),
        &json!({
            "score": ScoreKind::GtAtt,
            "units": panel.n_units(),
            "periods": panel.periods(),
            "K": cfg.folds,
            "seed": cfg.master_seed,
            "seeds": seeds,
            "alpha": cfg.alpha,
            "pairs": pairs,
            "dynamic": study.dynamic,
            "per_rep_dynamic": study.per_rep_dynamic,
        }),
    )?;
    println!("{} group-time effects over {} repetition(s)", study.pairs.len(), seeds.len());
    for (g, t, a) in &study.pairs {
        println!("  ATT({g}, {t}) = {:.4} ({:.4})", a.theta, a.se);
    }
    for h in &study.dynamic.horizons {
        println!("  e = {:>3}: {:.4} ({:.4})", h.e, h.estimate, h.se);
    }
    Ok(())
}

pub fn diagnose(cfg: &RunConfig) -> Result<()> {
    cfg.check()?;
    let ds = load(cfg.data()?, cfg)?;
    let problem = ScoreProblem::new(&ds, &cfg.score)?;
    let seed = cfg.seeds()[0];
    let folds = make_folds(problem.n, cfg.folds, seed)?;
    let labels: Vec<String> = cfg
        .diagnose
        .candidates
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}_{}", i + 1, s.label()))
        .collect();

    let mut r2_table = report::Table::new(&["nuisance", "learner", "r2", "clipped", "stack_weight"]);
    let mut per_task = BTreeMap::new();
    for task in &problem.tasks {
        let target = if task.probability {
            Target::Probability {
                clip: cfg.learners.clip,
            }
        } else {
            Target::Regression
        };
        let keep: Vec<usize> = (0..problem.n)
            .filter(|&i| task.subset.as_ref().is_none_or(|m| m[i]))
            .collect();
        let y: Vec<f64> = keep.iter().map(|&i| task.target[i]).collect();
        let mut preds = Vec::new();
        let mut rows = Vec::new();
        for (spec, label) in cfg.diagnose.candidates.iter().zip(&labels) {
            let oof = crossfit_predict(
                &task.name,
                spec,
                &task.features,
                &task.target,
                &folds,
                task.subset.as_deref(),
                target,
            )?;
            let p: Vec<f64> = keep.iter().map(|&i| oof.values[i]).collect();
            let r2 = crossfit_r2(&y, &p).ok();
            rows.push((label.clone(), r2, oof.clipped));
            preds.push(p);
        }
        let slices: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
        let stack = if slices.is_empty() {
            None
        } else {
            Some(stack_weights(&y, &slices)?)
        };
        for (j, (label, r2, clipped)) in rows.iter().enumerate() {
            r2_table.push(vec![
                task.name.clone(),
                label.clone(),
                r2.map_or("nan".into(), report::fmt_f64),
                clipped.to_string(),
                stack.as_ref().map_or("nan".into(), |s| report::fmt_f64(s.weights[j])),
            ]);
        }
        per_task.insert(
            task.name.clone(),
            json!({
                "r2": rows.iter().map(|(l, r, _)| (l.clone(), *r)).collect::<BTreeMap<_, _>>(),
                "clipped": rows.iter().map(|(l, _, c)| (l.clone(), *c)).collect::<BTreeMap<_, _>>(),
                "stack_weights": stack.as_ref().map(|s| labels.iter().cloned().zip(s.weights.iter().copied()).collect::<BTreeMap<_, _>>()),
                "stack_mse": stack.as_ref().map(|s| s.objective),
            }),
        );
    }

    let fit = dml_fit_problem(&problem, &cfg.learners, cfg.folds, seed, cfg.alpha)?;
    let eta = cfg.learners.estimate(&problem, fit.folds.as_ref())?;
    let delta = default_perturbations(&problem, &eta)?;
    let orth = check_orthogonality(&problem, &eta, &delta, &cfg.diagnose.lambdas)?;

    let dir = out_dir(cfg)?;
    r2_table.write(dir.join("learners.csv"))?;
    write_json(
        dir.join("diagnostics.json"),
        &json!({
            "score": cfg.score.kind,
            "n": problem.n,
            "K": cfg.folds,
            "seed": seed,
            "candidates": labels,
            "nuisances": per_task,
            "fit": fit,
            "weak_identification": fit.weak_identification,
            "orthogonality": orth,
        }),
    )?;
    println!("{}: theta = {:.6} (se {:.6})", cfg.score.kind, fit.theta, fit.se);
    println!(
        "orthogonality: f'(0) = {:.3e}, tolerance {:.3e} -> {}",
        orth.derivative,
        orth.tolerance,
        if orth.orthogonal { "orthogonal" } else { "NOT orthogonal" }
    );
    if fit.weak_identification {
        println!("weak identification flagged");
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> Result<()> {
    cfg.check()?;
    let sim = &cfg.simulation;
    let mc = &sim.monte_carlo;
    let seed_ds = match &sim.seed_data {
        Some(d) => load_csv_with(&d.path, &d.schema, &[])?,
        None => demo::nonlinear_seed(sim.seed_rows, mc.seed),
    };
    let dgp = calibrate_dgp(
        &seed_ds,
        &sim.calibration_outcome,
        &sim.calibration_propensity,
        sim.learners.clip,
    )?;
    let rep = monte_carlo(&dgp, &McNuisance::Learners(sim.learners.clone()), mc)?;
    let dir = out_dir(cfg)?;
    report::mc_summary_table(&rep).write(dir.join("mc_summary.csv"))?;
    report::mc_estimates_table(&rep).write(dir.join("mc_estimates.csv"))?;
    write_json(
        dir.join("results.json"),
        &json!({
            "dgp": dgp,
            "monte_carlo": mc,
            "calibration_outcome": sim.calibration_outcome,
            "calibration_propensity": sim.calibration_propensity,
            "learners": sim.learners,
            "failed": rep.failed,
            "summaries": rep.summaries,
        }),
    )?;
    println!("true ATE {:.6}, {} replications ({} failed)", dgp.true_ate, mc.replications, rep.failed);
    println!("{:<14} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}", "estimator", "mean_bias", "med_bias", "mad", "sd", "mean_se", "cover");
    for m in &rep.summaries {
        println!(
            "{:<14} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>8.3}",
            m.estimator, m.mean_bias, m.median_bias, m.mad, m.sd, m.mean_se, m.coverage
        );
    }
    Ok(())
}

fn schema_json(ds: &Dataset) -> serde_json::Value {
    serde_json::to_value(ds.schema()).expect("schema serializes")
}

/// Writes the demo datasets and one config per command into `dir`.
pub fn generate(dir: &Path, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let sets: Vec<(&str, Dataset)> = vec![
        ("ate_demo.csv", demo::binary_treatment(2000, seed)),
        ("late_demo.csv", demo::binary_instrument(2000, seed)),
        ("plr_demo.csv", demo::partially_linear(2000, seed)),
        ("iv_demo.csv", demo::linear_iv(2000, seed)),
        ("fe_panel_demo.csv", demo::fe_panel(400, 4, 1.0, seed)),
        ("staggered_demo.csv", demo::staggered_panel(1500, 2.0, seed)),
        ("seed_demo.csv", demo::nonlinear_seed(2000, seed)),
    ];
    for (name, ds) in &sets {
        ds.write_csv(dir.join(name))?;
    }
    let schema = |name: &str| schema_json(&sets.iter().find(|(n, _)| *n == name).unwrap().1);
    let small_forest = json!({"kind": "forest", "n_trees": 200, "max_depth": 8, "min_node_size": 5});
    let configs = [
        (
            "estimate_plr.json",
            json!({
                "data": {"path": "plr_demo.csv", "schema": schema("plr_demo.csv")},
                "score": {"kind": "plr"},
                "learners": {"regression": {"kind": "ols"}, "probability": {"kind": "ols"}},
                "folds": 5,
                "repetitions": 5,
                "output": "out_plr",
            }),
        ),
        (
            "estimate_ate.json",
            json!({
                "data": {"path": "ate_demo.csv", "schema": schema("ate_demo.csv")},
                "score": {"kind": "ate_dr"},
                "learners": {"regression": small_forest, "probability": {"kind": "forest", "n_trees": 200, "max_depth": 4}},
                "folds": 5,
                "repetitions": 3,
                "output": "out_ate",
            }),
        ),
        (
            "estimate_fe.json",
            json!({
                "data": {"path": "fe_panel_demo.csv", "schema": schema("fe_panel_demo.csv")},
                "score": {"kind": "fe_plr"},
                "learners": {"regression": {"kind": "ols"}},
                "folds": 5,
                "repetitions": 3,
                "output": "out_fe",
            }),
        ),
        (
            "attgt.json",
            json!({
                "data": {"path": "staggered_demo.csv", "schema": schema("staggered_demo.csv")},
                "score": {"kind": "gtatt"},
                "learners": {
                    "regression": {"kind": "forest", "n_trees": 200, "min_node_size": 10},
                    "probability": {"kind": "forest", "n_trees": 200, "min_node_size": 10},
                },
                "folds": 5,
                "seeds": [1, 2, 3, 4, 5],
                "output": "out_attgt",
            }),
        ),
        (
            "diagnose_ipw.json",
            json!({
                "data": {"path": "ate_demo.csv", "schema": schema("ate_demo.csv")},
                "score": {"kind": "ate_ipw"},
                "learners": {"regression": small_forest, "probability": {"kind": "forest", "n_trees": 200, "max_depth": 4}},
                "folds": 5,
                "diagnose": {"candidates": [{"kind": "mean"}, {"kind": "ols"}, {"kind": "tree", "max_depth": 4}]},
                "output": "out_diagnose",
            }),
        ),
        (
            "simulate.json",
            json!({
                "simulation": {
                    "calibration_outcome": {"kind": "forest", "n_trees": 1000, "min_node_size": 10},
                    "calibration_propensity": {"kind": "forest", "n_trees": 1000, "min_node_size": 10},
                    "learners": {
                        "regression": {"kind": "forest", "n_trees": 300, "max_depth": 8},
                        "probability": {"kind": "forest", "n_trees": 300, "max_depth": 4},
                    },
                    "monte_carlo": {"replications": 500, "folds": 5, "seed": 20240917},
                },
                "output": "out_simulate",
            }),
        ),
    ];
    for (name, value) in &configs {
        write_json(dir.join(name), value)?;
    }
    println!("wrote {} datasets and {} configs to {}", sets.len(), configs.len(), dir.display());
    Ok(())
}

pub fn print_defaults() -> Result<()> {
    println!("{}", serde_json::to_string_pretty(&RunConfig::default())?);
    Ok(())
}
